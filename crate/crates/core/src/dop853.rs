//! Dormand-Prince 8(5,3) stepper with the seventh-order continuous extension.
//!
//! The driver owns the state between steps so callers can project it onto a
//! constraint manifold after every accepted step; dense output always refers to
//! the unprojected step.

use crate::error::{Error, Result};

pub(crate) struct StepperOptions {
    pub rtol: f64,
    pub atol: f64,
    pub h_max: f64,
    pub max_steps: usize,
}

pub(crate) struct Dop853<F> {
    f: F,
    n: usize,
    opts: StepperOptions,
    t_end: f64,
    dir: f64,

    t: f64,
    y: Vec<f64>,
    k1: Vec<f64>,
    h: f64,
    facold: f64,
    last_rejected: bool,

    last: Option<LastStep>,
    pub steps: usize,
    pub rejected: usize,
    pub evals: usize,
}

struct LastStep {
    t_old: f64,
    h: f64,
    y_old: Vec<f64>,
    k_old: Vec<f64>,
    y_new: Vec<f64>,
    k_new: Vec<f64>,
    // Stages 6..12 in order.
    k: [Vec<f64>; 7],
    dense: Option<[Vec<f64>; 8]>,
}

impl<F> Dop853<F>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    pub fn new(mut f: F, t0: f64, y0: Vec<f64>, t_end: f64, opts: StepperOptions) -> Result<Self> {
        let n = y0.len();
        let mut k1 = vec![0.0; n];
        f(t0, &y0, &mut k1)?;
        let dir = if t_end >= t0 { 1.0 } else { -1.0 };
        let mut s = Self {
            f,
            n,
            opts,
            t_end,
            dir,
            t: t0,
            y: y0,
            k1,
            h: 0.0,
            facold: 1e-4,
            last_rejected: false,
            last: None,
            steps: 0,
            rejected: 0,
            evals: 1,
        };
        s.h = s.initial_step()?;
        Ok(s)
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn finished(&self) -> bool {
        (self.t_end - self.t) * self.dir <= 0.0
    }

    /// Replaces the current state (after a projection) and refreshes its derivative.
    pub fn set_state(&mut self, y: Vec<f64>) -> Result<()> {
        (self.f)(self.t, &y, &mut self.k1)?;
        self.evals += 1;
        self.y = y;
        Ok(())
    }

    fn sk(&self, a: f64, b: f64) -> f64 {
        self.opts.atol + self.opts.rtol * a.abs().max(b.abs())
    }

    fn initial_step(&mut self) -> Result<f64> {
        let n = self.n;
        let (mut dnf, mut dny) = (0.0, 0.0);
        for i in 0..n {
            let sk = self.sk(self.y[i], 0.0);
            dnf += (self.k1[i] / sk).powi(2);
            dny += (self.y[i] / sk).powi(2);
        }
        let span = (self.t_end - self.t).abs();
        let hmax = self.opts.h_max.min(span).max(f64::MIN_POSITIVE);
        let mut h = if dnf <= 1e-10 || dny <= 1e-10 { 1e-6 } else { (dny / dnf).sqrt() * 0.01 };
        h = h.min(hmax);
        let y1: Vec<f64> = (0..n).map(|i| self.y[i] + self.dir * h * self.k1[i]).collect();
        let mut f1 = vec![0.0; n];
        (self.f)(self.t + self.dir * h, &y1, &mut f1)?;
        self.evals += 1;
        let mut der2 = 0.0;
        for i in 0..n {
            der2 += ((f1[i] - self.k1[i]) / self.sk(self.y[i], 0.0)).powi(2);
        }
        der2 = der2.sqrt() / h;
        let der12 = der2.max(dnf.sqrt());
        let h1 = if der12 <= 1e-15 { (h * 1e-3).max(1e-6) } else { (0.01 / der12).powf(1.0 / 8.0) };
        Ok(self.dir * (100.0 * h).min(h1).min(hmax))
    }

    /// Advances by one accepted step, retrying with smaller steps as needed.
    pub fn step(&mut self) -> Result<()> {
        let n = self.n;
        let mut last_err: Option<Error> = None;
        loop {
            if self.steps + self.rejected >= self.opts.max_steps {
                return Err(Error::MaxSteps { tau: self.t });
            }
            let mut h = self.h;
            if h.abs() > self.opts.h_max {
                h = self.opts.h_max * self.dir;
            }
            if (self.t + h - self.t_end) * self.dir > 0.0 {
                h = self.t_end - self.t;
            }
            if h.abs() < 1e-14 * self.t.abs().max(1.0) {
                return Err(last_err.unwrap_or(Error::StepSizeUnderflow { tau: self.t, step: h }));
            }

            match self.attempt(h) {
                Ok((err, y_new, stages)) => {
                    let fac11 = err.powf(1.0 / 8.0);
                    let fac = (FACC2).max(FACC1.min(fac11 / SAFE));
                    let mut h_new = h / fac;
                    if err <= 1.0 {
                        let mut k_new = vec![0.0; n];
                        if let Err(e) = (self.f)(self.t + h, &y_new, &mut k_new) {
                            last_err = Some(e);
                            self.h = h * 0.25;
                            self.rejected += 1;
                            self.last_rejected = true;
                            continue;
                        }
                        self.evals += 1;
                        self.facold = err.max(1e-4);
                        if self.last_rejected && h_new.abs() > h.abs() {
                            h_new = h;
                        }
                        self.last_rejected = false;
                        let y_old = std::mem::replace(&mut self.y, y_new.clone());
                        let k_old = std::mem::replace(&mut self.k1, k_new.clone());
                        self.last = Some(LastStep {
                            t_old: self.t,
                            h,
                            y_old,
                            k_old,
                            y_new,
                            k_new,
                            k: stages,
                            dense: None,
                        });
                        self.t += h;
                        if (self.t - self.t_end) * self.dir > 0.0 || (self.t_end - self.t).abs() < 1e-14 * self.t.abs().max(1.0) {
                            self.t = self.t_end;
                        }
                        self.h = h_new;
                        self.steps += 1;
                        return Ok(());
                    }
                    self.h = h / FACC1.min(fac11 / SAFE);
                    self.rejected += 1;
                    self.last_rejected = true;
                }
                Err(e) => {
                    last_err = Some(e);
                    self.h = h * 0.25;
                    self.rejected += 1;
                    self.last_rejected = true;
                }
            }
        }
    }

    #[allow(clippy::type_complexity)]
    fn attempt(&mut self, h: f64) -> Result<(f64, Vec<f64>, [Vec<f64>; 7])> {
        let n = self.n;
        let t = self.t;
        let y = &self.y;
        let mut yy = vec![0.0; n];
        let mut ks: Vec<Vec<f64>> = Vec::with_capacity(12);
        ks.push(self.k1.clone());

        for (stage, (c, row)) in C.iter().zip(A.iter()).enumerate() {
            for i in 0..n {
                let mut acc = 0.0;
                for &(j, a) in row.iter() {
                    acc += a * ks[j][i];
                }
                yy[i] = y[i] + h * acc;
            }
            let mut k = vec![0.0; n];
            (self.f)(t + c * h, &yy, &mut k)?;
            self.evals += 1;
            ks.push(k);
            debug_assert_eq!(ks.len(), stage + 2);
        }

        let mut y_new = vec![0.0; n];
        let (mut err, mut err2) = (0.0, 0.0);
        for i in 0..n {
            let incr: f64 = B.iter().map(|&(j, b)| b * ks[j][i]).sum();
            y_new[i] = y[i] + h * incr;
            let sk = self.sk(y[i], y_new[i]);
            let e2 = incr - BHH1 * ks[0][i] - BHH2 * ks[8][i] - BHH3 * ks[11][i];
            err2 += (e2 / sk).powi(2);
            let e: f64 = ER.iter().map(|&(j, c)| c * ks[j][i]).sum();
            err += (e / sk).powi(2);
        }
        let mut deno = err + 0.01 * err2;
        if deno <= 0.0 {
            deno = 1.0;
        }
        let err = h.abs() * err * (1.0 / (deno * n as f64)).sqrt();
        if !err.is_finite() {
            return Err(Error::StepSizeUnderflow { tau: t, step: h });
        }
        let mut it = ks.into_iter().skip(5);
        let stages = std::array::from_fn(|_| it.next().expect("twelve stages"));
        Ok((err, y_new, stages))
    }

    /// Interpolates the last accepted step at `t`.
    pub fn dense(&mut self, t: f64) -> Result<Vec<f64>> {
        let n = self.n;
        let last = self.last.as_mut().ok_or_else(|| Error::InvalidArgument("no step taken yet".into()))?;
        if last.dense.is_none() {
            let h = last.h;
            let [k6, k7, k8, k9, k10, k11, k12] = &last.k;
            let (k1, kn) = (&last.k_old, &last.k_new);
            let comb = |d: &[f64; 12], i: usize| {
                d[0] * k1[i]
                    + d[1] * k6[i]
                    + d[2] * k7[i]
                    + d[3] * k8[i]
                    + d[4] * k9[i]
                    + d[5] * k10[i]
                    + d[6] * k11[i]
                    + d[7] * k12[i]
            };
            let mut cont: [Vec<f64>; 8] = std::array::from_fn(|_| vec![0.0; n]);
            for i in 0..n {
                let ydiff = last.y_new[i] - last.y_old[i];
                let bspl = h * k1[i] - ydiff;
                cont[0][i] = last.y_old[i];
                cont[1][i] = ydiff;
                cont[2][i] = bspl;
                cont[3][i] = ydiff - h * kn[i] - bspl;
                for (m, d) in D.iter().enumerate() {
                    cont[4 + m][i] = comb(d, i);
                }
            }
            let mut yy = vec![0.0; n];
            let mut k14 = vec![0.0; n];
            for i in 0..n {
                yy[i] = last.y_old[i]
                    + h * (A141 * k1[i]
                        + A147 * k7[i]
                        + A148 * k8[i]
                        + A149 * k9[i]
                        + A1410 * k10[i]
                        + A1411 * k11[i]
                        + A1412 * k12[i]
                        + A1413 * kn[i]);
            }
            (self.f)(last.t_old + C14 * h, &yy, &mut k14)?;
            let mut k15 = vec![0.0; n];
            for i in 0..n {
                yy[i] = last.y_old[i]
                    + h * (A151 * k1[i]
                        + A156 * k6[i]
                        + A157 * k7[i]
                        + A158 * k8[i]
                        + A1511 * k11[i]
                        + A1512 * k12[i]
                        + A1513 * kn[i]
                        + A1514 * k14[i]);
            }
            (self.f)(last.t_old + C15 * h, &yy, &mut k15)?;
            let mut k16 = vec![0.0; n];
            for i in 0..n {
                yy[i] = last.y_old[i]
                    + h * (A161 * k1[i]
                        + A166 * k6[i]
                        + A167 * k7[i]
                        + A168 * k8[i]
                        + A169 * k9[i]
                        + A1613 * kn[i]
                        + A1614 * k14[i]
                        + A1615 * k15[i]);
            }
            (self.f)(last.t_old + C16 * h, &yy, &mut k16)?;
            self.evals += 3;
            for i in 0..n {
                for (m, d) in D.iter().enumerate() {
                    cont[4 + m][i] =
                        h * (cont[4 + m][i] + d[8] * kn[i] + d[9] * k14[i] + d[10] * k15[i] + d[11] * k16[i]);
                }
            }
            last.dense = Some(cont);
        }
        let cont = last.dense.as_ref().expect("dense coefficients computed above");
        let s = (t - last.t_old) / last.h;
        let s1 = 1.0 - s;
        Ok((0..n)
            .map(|i| {
                let conpar = cont[4][i] + (cont[5][i] + (cont[6][i] + cont[7][i] * s) * s1) * s;
                cont[0][i] + (cont[1][i] + (cont[2][i] + (cont[3][i] + conpar * s1) * s) * s1) * s
            })
            .collect())
    }

    /// Start of the last accepted step.
    pub fn t_prev(&self) -> Option<f64> {
        self.last.as_ref().map(|l| l.t_old)
    }
}

const SAFE: f64 = 0.9;
const FACC1: f64 = 1.0 / 0.333;
const FACC2: f64 = 1.0 / 6.0;

// Stage abscissae for stages 2..12; stage 12 sits at the step end.
const C: [f64; 11] = [C2, C3, C4, C5, C6, C7, C8, C9, C10, C11, 1.0];

// Lower-triangular coefficients as (stage index, a) pairs, stage index 0 = k1.
const A: [&[(usize, f64)]; 11] = [
    &[(0, A21)],
    &[(0, A31), (1, A32)],
    &[(0, A41), (2, A43)],
    &[(0, A51), (2, A53), (3, A54)],
    &[(0, A61), (3, A64), (4, A65)],
    &[(0, A71), (3, A74), (4, A75), (5, A76)],
    &[(0, A81), (3, A84), (4, A85), (5, A86), (6, A87)],
    &[(0, A91), (3, A94), (4, A95), (5, A96), (6, A97), (7, A98)],
    &[(0, A101), (3, A104), (4, A105), (5, A106), (6, A107), (7, A108), (8, A109)],
    &[(0, A111), (3, A114), (4, A115), (5, A116), (6, A117), (7, A118), (8, A119), (9, A1110)],
    &[(0, A121), (3, A124), (4, A125), (5, A126), (6, A127), (7, A128), (8, A129), (9, A1210), (10, A1211)],
];

const B: [(usize, f64); 8] = [(0, B1), (5, B6), (6, B7), (7, B8), (8, B9), (9, B10), (10, B11), (11, B12)];
const ER: [(usize, f64); 8] = [(0, ER1), (5, ER6), (6, ER7), (7, ER8), (8, ER9), (9, ER10), (10, ER11), (11, ER12)];

// Rows: coefficients of k1, k6..k12, k_new, k14, k15, k16.
const D: [[f64; 12]; 4] = [
    [D41, D46, D47, D48, D49, D410, D411, D412, D413, D414, D415, D416],
    [D51, D56, D57, D58, D59, D510, D511, D512, D513, D514, D515, D516],
    [D61, D66, D67, D68, D69, D610, D611, D612, D613, D614, D615, D616],
    [D71, D76, D77, D78, D79, D710, D711, D712, D713, D714, D715, D716],
];

const A21: f64 = 5.26001519587677318785587544488E-2;
const A31: f64 = 1.97250569845378994544595329183E-2;
const A32: f64 = 5.91751709536136983633785987549E-2;
const A41: f64 = 2.95875854768068491816892993775E-2;
const A43: f64 = 8.87627564304205475450678981324E-2;
const A51: f64 = 2.41365134159266685502369798665E-1;
const A53: f64 = -8.84549479328286085344864962717E-1;
const A54: f64 = 9.24834003261792003115737966543E-1;
const A61: f64 = 3.7037037037037037037037037037E-2;
const A64: f64 = 1.70828608729473871279604482173E-1;
const A65: f64 = 1.25467687566822425016691814123E-1;
const A71: f64 = 3.7109375E-2;
const A74: f64 = 1.70252211019544039314978060272E-1;
const A75: f64 = 6.02165389804559606850219397283E-2;
const A76: f64 = -1.7578125E-2;
const A81: f64 = 3.70920001185047927108779319836E-2;
const A84: f64 = 1.70383925712239993810214054705E-1;
const A85: f64 = 1.07262030446373284651809199168E-1;
const A86: f64 = -1.53194377486244017527936158236E-2;
const A87: f64 = 8.27378916381402288758473766002E-3;
const A91: f64 = 6.24110958716075717114429577812E-1;
const A94: f64 = -3.36089262944694129406857109825E0;
const A95: f64 = -8.68219346841726006818189891453E-1;
const A96: f64 = 2.75920996994467083049415600797E1;
const A97: f64 = 2.01540675504778934086186788979E1;
const A98: f64 = -4.34898841810699588477366255144E1;
const A101: f64 = 4.77662536438264365890433908527E-1;
const A104: f64 = -2.48811461997166764192642586468E0;
const A105: f64 = -5.90290826836842996371446475743E-1;
const A106: f64 = 2.12300514481811942347288949897E1;
const A107: f64 = 1.52792336328824235832596922938E1;
const A108: f64 = -3.32882109689848629194453265587E1;
const A109: f64 = -2.03312017085086261358222928593E-2;
const A111: f64 = -9.3714243008598732571704021658E-1;
const A114: f64 = 5.18637242884406370830023853209E0;
const A115: f64 = 1.09143734899672957818500254654E0;
const A116: f64 = -8.14978701074692612513997267357E0;
const A117: f64 = -1.85200656599969598641566180701E1;
const A118: f64 = 2.27394870993505042818970056734E1;
const A119: f64 = 2.49360555267965238987089396762E0;
const A1110: f64 = -3.0467644718982195003823669022E0;
const A121: f64 = 2.27331014751653820792359768449E0;
const A124: f64 = -1.05344954667372501984066689879E1;
const A125: f64 = -2.00087205822486249909675718444E0;
const A126: f64 = -1.79589318631187989172765950534E1;
const A127: f64 = 2.79488845294199600508499808837E1;
const A128: f64 = -2.85899827713502369474065508674E0;
const A129: f64 = -8.87285693353062954433549289258E0;
const A1210: f64 = 1.23605671757943030647266201528E1;
const A1211: f64 = 6.43392746015763530355970484046E-1;

const A141: f64 = 5.61675022830479523392909219681E-2;
const A147: f64 = 2.53500210216624811088794765333E-1;
const A148: f64 = -2.46239037470802489917441475441E-1;
const A149: f64 = -1.24191423263816360469010140626E-1;
const A1410: f64 = 1.5329179827876569731206322685E-1;
const A1411: f64 = 8.20105229563468988491666602057E-3;
const A1412: f64 = 7.56789766054569976138603589584E-3;
const A1413: f64 = -8.298E-3;
const A151: f64 = 3.18346481635021405060768473261E-2;
const A156: f64 = 2.83009096723667755288322961402E-2;
const A157: f64 = 5.35419883074385676223797384372E-2;
const A158: f64 = -5.49237485713909884646569340306E-2;
const A1511: f64 = -1.08347328697249322858509316994E-4;
const A1512: f64 = 3.82571090835658412954920192323E-4;
const A1513: f64 = -3.40465008687404560802977114492E-4;
const A1514: f64 = 1.41312443674632500278074618366E-1;
const A161: f64 = -4.28896301583791923408573538692E-1;
const A166: f64 = -4.69762141536116384314449447206E0;
const A167: f64 = 7.68342119606259904184240953878E0;
const A168: f64 = 4.06898981839711007970213554331E0;
const A169: f64 = 3.56727187455281109270669543021E-1;
const A1613: f64 = -1.39902416515901462129418009734E-3;
const A1614: f64 = 2.9475147891527723389556272149E0;
const A1615: f64 = -9.15095847217987001081870187138E0;

const B1: f64 = 5.42937341165687622380535766363E-2;
const B6: f64 = 4.45031289275240888144113950566E0;
const B7: f64 = 1.89151789931450038304281599044E0;
const B8: f64 = -5.8012039600105847814672114227E0;
const B9: f64 = 3.1116436695781989440891606237E-1;
const B10: f64 = -1.52160949662516078556178806805E-1;
const B11: f64 = 2.01365400804030348374776537501E-1;
const B12: f64 = 4.47106157277725905176885569043E-2;

const BHH1: f64 = 0.244094488188976377952755905512E+00;
const BHH2: f64 = 0.733846688281611857341361741547E+00;
const BHH3: f64 = 0.220588235294117647058823529412E-01;

const C2: f64 = 0.526001519587677318785587544488E-01;
const C3: f64 = 0.789002279381515978178381316732E-01;
const C4: f64 = 0.118350341907227396726757197510E+00;
const C5: f64 = 0.281649658092772603273242802490E+00;
const C6: f64 = 0.333333333333333333333333333333E+00;
const C7: f64 = 0.25E+00;
const C8: f64 = 0.307692307692307692307692307692E+00;
const C9: f64 = 0.651282051282051282051282051282E+00;
const C10: f64 = 0.6E+00;
const C11: f64 = 0.857142857142857142857142857142E+00;
const C14: f64 = 0.1E+00;
const C15: f64 = 0.2E+00;
const C16: f64 = 0.777777777777777777777777777778E+00;

const ER1: f64 = 0.1312004499419488073250102996E-01;
const ER6: f64 = -0.1225156446376204440720569753E+01;
const ER7: f64 = -0.4957589496572501915214079952E+00;
const ER8: f64 = 0.1664377182454986536961530415E+01;
const ER9: f64 = -0.3503288487499736816886487290E+00;
const ER10: f64 = 0.3341791187130174790297318841E+00;
const ER11: f64 = 0.8192320648511571246570742613E-01;
const ER12: f64 = -0.2235530786388629525884427845E-01;

const D41: f64 = -0.84289382761090128651353491142E+01;
const D46: f64 = 0.56671495351937776962531783590E+00;
const D47: f64 = -0.30689499459498916912797304727E+01;
const D48: f64 = 0.23846676565120698287728149680E+01;
const D49: f64 = 0.21170345824450282767155149946E+01;
const D410: f64 = -0.87139158377797299206789907490E+00;
const D411: f64 = 0.22404374302607882758541771650E+01;
const D412: f64 = 0.63157877876946881815570249290E+00;
const D413: f64 = -0.88990336451333310820698117400E-01;
const D414: f64 = 0.18148505520854727256656404962E+02;
const D415: f64 = -0.91946323924783554000451984436E+01;
const D416: f64 = -0.44360363875948939664310572000E+01;
const D51: f64 = 0.10427508642579134603413151009E+02;
const D56: f64 = 0.24228349177525818288430175319E+03;
const D57: f64 = 0.16520045171727028198505394887E+03;
const D58: f64 = -0.37454675472269020279518312152E+03;
const D59: f64 = -0.22113666853125306036270938578E+02;
const D510: f64 = 0.77334326684722638389603898808E+01;
const D511: f64 = -0.30674084731089398182061213626E+02;
const D512: f64 = -0.93321305264302278729567221706E+01;
const D513: f64 = 0.15697238121770843886131091075E+02;
const D514: f64 = -0.31139403219565177677282850411E+02;
const D515: f64 = -0.93529243588444783865713862664E+01;
const D516: f64 = 0.35816841486394083752465898540E+02;
const D61: f64 = 0.19985053242002433820987653617E+02;
const D66: f64 = -0.38703730874935176555105901742E+03;
const D67: f64 = -0.18917813819516756882830838328E+03;
const D68: f64 = 0.52780815920542364900561016686E+03;
const D69: f64 = -0.11573902539959630126141871134E+02;
const D610: f64 = 0.68812326946963000169666922661E+01;
const D611: f64 = -0.10006050966910838403183860980E+01;
const D612: f64 = 0.77771377980534432092869265740E+00;
const D613: f64 = -0.27782057523535084065932004339E+01;
const D614: f64 = -0.60196695231264120758267380846E+02;
const D615: f64 = 0.84320405506677161018159903784E+02;
const D616: f64 = 0.11992291136182789328035130030E+02;
const D71: f64 = -0.25693933462703749003312586129E+02;
const D76: f64 = -0.15418974869023643374053993627E+03;
const D77: f64 = -0.23152937917604549567536039109E+03;
const D78: f64 = 0.35763911791061412378285349910E+03;
const D79: f64 = 0.93405324183624310003907691704E+02;
const D710: f64 = -0.37458323136451633156875139351E+02;
const D711: f64 = 0.10409964950896230045147246184E+03;
const D712: f64 = 0.29840293426660503123344363579E+02;
const D713: f64 = -0.43533456590011143754432175058E+02;
const D714: f64 = 0.96324553959188282948394950600E+02;
const D715: f64 = -0.39177261675615439165231486172E+02;
const D716: f64 = -0.14972683625798562581422125276E+03;
