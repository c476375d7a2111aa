use clap::Parser;

use chazy_cli::{run, Cli, ErrorRecord, Status};

fn main() {
    let cli = Cli::parse();
    let code = match run(&cli) {
        Ok(Status::Success) => 0,
        Ok(Status::Failed) => 1,
        Err(e) => {
            let record = ErrorRecord::of(&e);
            eprintln!("{}", serde_json::to_string(&record).expect("error records serialize"));
            record.exit_code()
        }
    };
    std::process::exit(code);
}
