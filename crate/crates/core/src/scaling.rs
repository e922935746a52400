//! Scaling-law arithmetic and the optimal multi-stage schedule.
//!
//! ```text
//! L(N, S)  = (N_c / N)^α_N + (S_c / S)^α_S
//! C        ≈ 6 N B S
//! B_crit   = B_* / L^(1/α_B)
//! S_eff,k  = S_c / (L_{k-1} - (N_c / N_k)^α_N)^(1/α_S)
//! L_k      = L(N_k, S_eff,k + S_k)
//! ```
//!
//! `S` in the loss law counts steps at large batch (the minimum step
//! count). Training at the critical batch takes twice as many optimizer
//! steps, which is the step and compute unit reported per stage.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simplex::NelderMead;

/// FLOPs in one petaflop/s-day.
pub const PF_DAY: f64 = 8.64e19;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingLawConstants {
    pub alpha_n: f64,
    pub alpha_s: f64,
    pub alpha_b: f64,
    pub n_c: f64,
    pub s_c: f64,
    pub b_star: f64,
}

impl Default for ScalingLawConstants {
    /// Published fits for autoregressive transformer language models.
    fn default() -> Self {
        ScalingLawConstants {
            alpha_n: 0.076,
            alpha_s: 0.76,
            alpha_b: 0.21,
            n_c: 8.8e13,
            s_c: 2.1e3,
            b_star: 2e8,
        }
    }
}

const KEYS: [&str; 6] = ["alpha_n", "alpha_s", "alpha_b", "n_c", "s_c", "b_star"];

impl ScalingLawConstants {
    pub fn validate(&self) -> Result<()> {
        for (k, v) in KEYS.iter().zip(self.values()) {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{k} must be positive and finite, got {v}")));
            }
        }
        Ok(())
    }

    fn values(&self) -> [f64; 6] {
        [self.alpha_n, self.alpha_s, self.alpha_b, self.n_c, self.s_c, self.b_star]
    }

    /// Parses `key = value` lines (`:` also accepted); `#` starts a
    /// comment. Missing keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = ScalingLawConstants::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .or_else(|| line.split_once(':'))
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("line {}: bad number `{}`", lineno + 1, v.trim())))?;
            let slot = match k.trim().to_ascii_lowercase().as_str() {
                "alpha_n" => &mut c.alpha_n,
                "alpha_s" => &mut c.alpha_s,
                "alpha_b" => &mut c.alpha_b,
                "n_c" => &mut c.n_c,
                "s_c" => &mut c.s_c,
                "b_star" => &mut c.b_star,
                other => return Err(Error::Config(format!("line {}: unknown key `{other}`", lineno + 1))),
            };
            *slot = v;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn to_text(&self) -> String {
        KEYS.iter()
            .zip(self.values())
            .map(|(k, v)| format!("{k} = {v:e}\n"))
            .collect()
    }

    /// Irreducible loss of a size-`n` model, `(N_c/N)^α_N`.
    pub fn size_floor(&self, n: f64) -> f64 {
        (self.n_c / n).powf(self.alpha_n)
    }
}

pub fn predicted_loss(n: f64, s: f64, c: &ScalingLawConstants) -> Result<f64> {
    if !(n > 0.0) || !(s > 0.0) {
        return Err(Error::Domain(format!("loss law needs N > 0 and S > 0, got N={n}, S={s}")));
    }
    Ok(c.size_floor(n) + (c.s_c / s).powf(c.alpha_s))
}

pub fn total_compute(n: f64, b: f64, s: f64) -> f64 {
    6.0 * n * b * s
}

pub fn critical_batch(loss: f64, c: &ScalingLawConstants) -> f64 {
    c.b_star / loss.powf(1.0 / c.alpha_b)
}

/// Steps (in loss-law units) a size-`n` model needs from scratch to reach
/// `l_prev`.
pub fn effective_steps(l_prev: f64, n: f64, c: &ScalingLawConstants) -> Result<f64> {
    let floor = c.size_floor(n);
    let gap = l_prev - floor;
    if !(gap > 0.0) {
        return Err(Error::InfeasibleStage {
            n_params: n,
            prev_loss: l_prev,
            floor,
        });
    }
    Ok(c.s_c / gap.powf(1.0 / c.alpha_s))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: usize,
    pub n_params: f64,
    /// Steps added in this stage, loss-law units.
    pub min_steps: f64,
    /// `S_eff` at stage entry (0 for the first stage).
    pub effective_start: f64,
    /// Optimizer steps at the critical batch, `2 * min_steps`.
    pub steps: f64,
    /// Cumulative optimizer steps at the end of the stage.
    pub clock: f64,
    pub end_loss: f64,
    /// `6 * N_k * B_crit * steps`, FLOPs.
    pub stage_compute: f64,
}

impl StageRecord {
    pub fn stage_compute_pf_days(&self) -> f64 {
        self.stage_compute / PF_DAY
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageSchedule {
    pub stages: Vec<StageRecord>,
    pub target_loss: f64,
    pub batch: f64,
    pub total_compute: f64,
}

impl StageSchedule {
    pub fn m(&self) -> usize {
        self.stages.len()
    }

    /// Rebuilds a schedule from stage sizes and the per-stage steps of all
    /// but the last stage; the last stage's steps are solved so it ends at
    /// `target_loss`.
    pub fn from_sizes(sizes: &[f64], min_steps: &[f64], target_loss: f64, c: &ScalingLawConstants) -> Result<Self> {
        let m = sizes.len();
        if m == 0 || min_steps.len() + 1 != m {
            return Err(Error::Input(format!(
                "need M sizes and M-1 step counts, got {} and {}",
                m,
                min_steps.len()
            )));
        }
        let batch = critical_batch(target_loss, c);
        let mut stages = Vec::with_capacity(m);
        let mut prev: Option<f64> = None;
        let mut clock = 0.0;
        for (k, &n) in sizes.iter().enumerate() {
            let start = match prev {
                None => 0.0,
                Some(l) => effective_steps(l, n, c)?,
            };
            let (s, end_loss) = if k + 1 < m {
                let s = min_steps[k];
                (s, predicted_loss(n, start + s, c)?)
            } else {
                let s = effective_steps(target_loss, n, c)? - start;
                (s, target_loss)
            };
            if !(s >= 0.0) {
                return Err(Error::Infeasible(format!(
                    "stage {} would need {s} steps to reach the target",
                    k + 1
                )));
            }
            let steps = 2.0 * s;
            clock += steps;
            stages.push(StageRecord {
                stage: k + 1,
                n_params: n,
                min_steps: s,
                effective_start: start,
                steps,
                clock,
                end_loss,
                stage_compute: total_compute(n, batch, steps),
            });
            prev = Some(end_loss);
        }
        let total_compute = stages.iter().map(|s| s.stage_compute).sum();
        Ok(StageSchedule {
            stages,
            target_loss,
            batch,
            total_compute,
        })
    }

    /// Post-hoc check of every constraint of the optimization problem.
    pub fn check_constraints(&self, n_target: Option<f64>, tol: f64) -> Result<()> {
        let fail = |m: String| Err(Error::Contract(m));
        let last = self.stages.last().ok_or_else(|| Error::Contract("empty schedule".into()))?;
        if (last.end_loss - self.target_loss).abs() > tol * self.target_loss {
            return fail(format!("final loss {} vs target {}", last.end_loss, self.target_loss));
        }
        if let Some(nt) = n_target {
            if (last.n_params - nt).abs() > tol * nt {
                return fail(format!("final size {} vs target {nt}", last.n_params));
            }
        }
        for w in self.stages.windows(2) {
            if w[1].n_params < w[0].n_params * (1.0 - tol) {
                return fail(format!("stage {} shrinks the model", w[1].stage));
            }
            if !(w[1].end_loss < w[0].end_loss) {
                return fail(format!("loss does not decrease in stage {}", w[1].stage));
            }
        }
        for s in &self.stages {
            if !(s.n_params > 0.0) || s.min_steps < -tol || !(s.stage_compute > 0.0) {
                return fail(format!("stage {} violates positivity", s.stage));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverOptions {
    pub starts: usize,
    pub seed: u64,
    pub simplex: NelderMead,
    pub polish_restarts: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            starts: 32,
            seed: 0,
            simplex: NelderMead::default(),
            polish_restarts: 8,
        }
    }
}

/// Decision variables: `ln N_1`, squared log-ratios between consecutive
/// sizes (so ordering holds by construction), and `ln S_k` for all but the
/// last stage. With a pinned final size the sizes are unrolled backwards
/// from it instead.
struct Layout {
    m: usize,
    n_target: Option<f64>,
    ratios: Option<Vec<f64>>,
}

impl Layout {
    fn dim(&self) -> usize {
        let sizes = match (&self.ratios, self.n_target) {
            (Some(_), _) => 1,
            (None, Some(_)) => self.m - 1,
            (None, None) => self.m,
        };
        sizes + self.m - 1
    }

    fn decode(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let m = self.m;
        let (size_vars, step_vars) = x.split_at(self.dim() - (m - 1));
        let sizes = match (&self.ratios, self.n_target) {
            (Some(r), _) => {
                let mut n = vec![size_vars[0].exp()];
                for k in 1..m {
                    n.push(n[k - 1] * r[k - 1]);
                }
                n
            }
            (None, Some(nt)) => {
                let mut logs = vec![nt.ln(); m];
                for k in (0..m - 1).rev() {
                    logs[k] = logs[k + 1] - size_vars[k] * size_vars[k];
                }
                logs.into_iter().map(f64::exp).collect()
            }
            (None, None) => {
                let mut logn = size_vars[0];
                let mut n = vec![logn.exp()];
                for z in &size_vars[1..] {
                    logn += z * z;
                    n.push(logn.exp());
                }
                n
            }
        };
        (sizes, step_vars.iter().map(|s| s.exp()).collect())
    }
}

/// Objective: total compute in PF-days, with a graded penalty where the
/// recurrence is infeasible so the simplex can walk back.
fn objective(layout: &Layout, x: &[f64], target: f64, c: &ScalingLawConstants) -> f64 {
    let (sizes, steps) = layout.decode(x);
    match StageSchedule::from_sizes(&sizes, &steps, target, c) {
        Ok(s) => s.total_compute / PF_DAY,
        Err(_) => {
            let floor = c.size_floor(*sizes.last().unwrap());
            1e30 * (1.0 + (floor - target).max(0.0) + x.iter().map(|v| v.abs()).sum::<f64>())
        }
    }
}

fn solve(layout: Layout, target: f64, c: &ScalingLawConstants, opts: &SolverOptions) -> Result<StageSchedule> {
    c.validate()?;
    if !(target > 0.0) {
        return Err(Error::Domain(format!("target loss must be positive, got {target}")));
    }
    if let Some(nt) = layout.n_target {
        if c.size_floor(nt) >= target {
            return Err(Error::Infeasible(format!(
                "a model of {nt:e} parameters cannot reach loss {target} (floor {})",
                c.size_floor(nt)
            )));
        }
    }
    let m = layout.m;
    // Size where the floor sits at 90% of the target: a scale for the
    // random starts.
    let n_ref = c.n_c / (0.9 * target).powf(1.0 / c.alpha_n);
    let s_ref = effective_steps(target, n_ref * 4.0, c).unwrap_or(c.s_c);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let dim = layout.dim();
    let mut best: Option<(f64, Vec<f64>, bool)> = None;
    let mut any_converged = false;
    for _ in 0..opts.starts.max(1) {
        let mut x0 = Vec::with_capacity(dim);
        match (&layout.ratios, layout.n_target) {
            (Some(_), _) => x0.push((n_ref * 10f64.powf(rng.gen_range(-3.0..0.5))).ln()),
            (None, Some(_)) => x0.extend((0..m - 1).map(|_| rng.gen_range(0.3..2.0))),
            (None, None) => {
                x0.push((n_ref * 10f64.powf(rng.gen_range(-2.5..0.0))).ln());
                x0.extend((1..m).map(|_| rng.gen_range(0.3..2.0)));
            }
        }
        x0.extend((1..m).map(|_| (s_ref * 10f64.powf(rng.gen_range(-1.0..0.5))).ln()));
        let f = |x: &[f64]| objective(&layout, x, target, c);
        let r = opts.simplex.minimize_polished(f, &x0, opts.polish_restarts);
        any_converged |= r.converged;
        if r.f.is_finite() && best.as_ref().map_or(true, |b| r.f < b.0) {
            best = Some((r.f, r.x, r.converged));
        }
    }
    let (f, x, _) = best.ok_or_else(|| Error::NotConverged {
        detail: "no multi-start produced a finite objective".into(),
        best_compute: f64::INFINITY,
    })?;
    if f >= 1e30 {
        return Err(Error::Infeasible(format!("no feasible {m}-stage schedule found")));
    }
    if !any_converged {
        return Err(Error::NotConverged {
            detail: format!("none of {} starts met the simplex tolerance", opts.starts),
            best_compute: f * PF_DAY,
        });
    }
    let (sizes, steps) = layout.decode(&x);
    StageSchedule::from_sizes(&sizes, &steps, target, c)
}

/// Compute-optimal `m`-stage schedule reaching `target` loss, with the
/// final size pinned to `n_target` when given.
pub fn optimal_schedule(m: usize, target: f64, n_target: Option<f64>, c: &ScalingLawConstants) -> Result<StageSchedule> {
    optimal_schedule_with(m, target, n_target, c, &SolverOptions::default())
}

pub fn optimal_schedule_with(
    m: usize,
    target: f64,
    n_target: Option<f64>,
    c: &ScalingLawConstants,
    opts: &SolverOptions,
) -> Result<StageSchedule> {
    if m == 0 {
        return Err(Error::Input("need at least one stage".into()));
    }
    if m == 1 {
        if let Some(nt) = n_target {
            return StageSchedule::from_sizes(&[nt], &[], target, c);
        }
    }
    solve(
        Layout {
            m,
            n_target,
            ratios: None,
        },
        target,
        c,
        opts,
    )
}

/// Best schedule whose consecutive size ratios all come from `ratio_set`,
/// searching every assignment of ratios to stage boundaries.
pub fn ratio_constrained_schedule(
    m: usize,
    target: f64,
    ratio_set: &[f64],
    c: &ScalingLawConstants,
    opts: &SolverOptions,
) -> Result<StageSchedule> {
    if m == 0 || ratio_set.is_empty() || ratio_set.iter().any(|r| !(*r >= 1.0)) {
        return Err(Error::Input("need M >= 1 and ratios >= 1".into()));
    }
    let combos = ratio_set.len().checked_pow((m - 1) as u32).filter(|&n| n <= 20_000);
    let combos = combos.ok_or_else(|| Error::Input(format!("too many ratio assignments for M={m}")))?;
    let mut best: Option<StageSchedule> = None;
    for mut code in 0..combos {
        let mut ratios = Vec::with_capacity(m - 1);
        for _ in 1..m {
            ratios.push(ratio_set[code % ratio_set.len()]);
            code /= ratio_set.len();
        }
        let layout = Layout {
            m,
            n_target: None,
            ratios: Some(ratios),
        };
        match solve(layout, target, c, opts) {
            Ok(s) if best.as_ref().map_or(true, |b| s.total_compute < b.total_compute) => best = Some(s),
            Ok(_) | Err(Error::Infeasible(_)) | Err(Error::NotConverged { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    best.ok_or_else(|| Error::Infeasible("no ratio assignment admits a feasible schedule".into()))
}

/// How the multi-stage schedule is sized when measuring savings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinalSize {
    /// Final stage size is optimized together with the rest.
    Free,
    /// Final stage size fixed to the single-stage optimum.
    PinnedToSingleStage,
}

/// Optimal `m`-stage compute over optimal single-stage compute. The
/// multi-stage final size is left free, which is the reading under which
/// the published factors are reproduced.
pub fn compute_reduction_factor(m: usize, target: f64, c: &ScalingLawConstants) -> Result<f64> {
    compute_reduction_factor_with(m, target, c, FinalSize::Free, &SolverOptions::default())
}

pub fn compute_reduction_factor_with(
    m: usize,
    target: f64,
    c: &ScalingLawConstants,
    final_size: FinalSize,
    opts: &SolverOptions,
) -> Result<f64> {
    let single = optimal_schedule_with(1, target, None, c, opts)?;
    if m == 1 {
        return Ok(1.0);
    }
    let n_target = match final_size {
        FinalSize::Free => None,
        FinalSize::PinnedToSingleStage => Some(single.stages[0].n_params),
    };
    let multi = optimal_schedule_with(m, target, n_target, c, opts)?;
    Ok(multi.total_compute / single.total_compute)
}

/// Single-stage compute-optimal model size for `target`.
pub fn compute_optimal_size(target: f64, c: &ScalingLawConstants) -> Result<f64> {
    Ok(optimal_schedule(1, target, None, c)?.stages[0].n_params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_law_examples() {
        let c = ScalingLawConstants::default();
        assert!((predicted_loss(c.n_c, c.s_c, &c).unwrap() - 2.0).abs() < 1e-15);
        assert!(predicted_loss(0.0, 1.0, &c).is_err());
        assert!(predicted_loss(1.0, -1.0, &c).is_err());
        let big = predicted_loss(1e6, 1e30, &c).unwrap();
        assert!((big - c.size_floor(1e6)).abs() < 1e-12);
        assert!(predicted_loss(306e6, 1e9, &c).unwrap() < 3.0);
    }

    #[test]
    fn compute_and_batch() {
        assert_eq!(total_compute(1000.0, 2.0, 10.0), 120000.0);
        let c = ScalingLawConstants::default();
        assert_eq!(critical_batch(1.0, &c), c.b_star);
        let flat = ScalingLawConstants { alpha_b: 1e12, ..c };
        assert!((critical_batch(3.0, &flat) / c.b_star - 1.0).abs() < 1e-9);
    }

    #[test]
    fn effective_steps_inverts_loss_law() {
        let c = ScalingLawConstants::default();
        let l = predicted_loss(5e7, 12345.0, &c).unwrap();
        let s = effective_steps(l, 5e7, &c).unwrap();
        assert!((s / 12345.0 - 1.0).abs() < 1e-10);
        let floor = c.size_floor(5e7);
        assert!(matches!(effective_steps(floor, 5e7, &c), Err(Error::InfeasibleStage { .. })));
        assert!(effective_steps(floor + 1e-9, 5e7, &c).unwrap() > 1e9);
    }

    #[test]
    fn constants_file_round_trip() {
        let c = ScalingLawConstants {
            b_star: 2.1e8,
            ..Default::default()
        };
        assert_eq!(ScalingLawConstants::parse(&c.to_text()).unwrap(), c);
        let parsed = ScalingLawConstants::parse("# fit\nalpha_n: 0.08\n\nS_C = 3000 # steps\n").unwrap();
        assert_eq!(parsed.alpha_n, 0.08);
        assert_eq!(parsed.s_c, 3000.0);
        assert!(ScalingLawConstants::parse("alpha_q = 1").is_err());
        assert!(ScalingLawConstants::parse("n_c = -4").is_err());
        assert!(ScalingLawConstants::parse("n_c 4").is_err());
    }

    #[test]
    fn schedule_rejects_unreachable_target() {
        let c = ScalingLawConstants::default();
        let tiny = 1e3;
        let r = optimal_schedule(2, 3.0, Some(tiny), &c);
        assert!(matches!(r, Err(Error::Infeasible(_))), "{r:?}");
    }
}
