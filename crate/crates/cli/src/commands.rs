use std::f64::consts::PI;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use pym_core::algebra::lie::Algebra;
use pym_core::field::{snapshot, GaugeField};
use pym_core::functional::{el_residual, flow, ym_p_energy, FlowRecord, PExponent};
use pym_core::inequalities::run_battery;
use pym_core::instanton::{
    bpst, energy_identity_check, index_semicontinuity_experiment, p_schedule_check, BackgroundSpec, BubbleSpec,
    EnergyIdentity, GluedBubble, IndexTable, PScheduleRow,
};
use pym_core::lattice::{norm, Domain};
use pym_core::lorentz::{lattice_annulus_samples, lebesgue_norm, lorentz_norm, neck_quantization_radial, QuantizationReport};
use pym_core::neck::sweep::neck_sweep;
use pym_core::neck::{log_grid, weight_omega, weight_omega2, NeckConstants};
use pym_core::spectral::{assemble, solve, sylvester_invariance_lattice, SpectralReport, SylvesterReport, WeightField};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{parse_grid, parse_ks, CommandKind, ConfigError, ExperimentConfig, FieldSource, WeightSpec};
use crate::output::{long_row, num, Artifacts, LONG_HEADER};

#[derive(Debug)]
pub enum Failure {
    /// Exit 2.
    Config(ConfigError),
    /// Exit 3; artifacts written so far stay on disk.
    Numerical(String),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Config(_) => 2,
            Failure::Numerical(_) => 3,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(e) => write!(f, "invalid config: {e}"),
            Failure::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl From<pym_core::Error> for Failure {
    fn from(e: pym_core::Error) -> Self {
        Failure::Numerical(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Numerical(format!("io: {e}"))
    }
}

fn config_error(field: &str, message: impl std::fmt::Display) -> Failure {
    Failure::Config(ConfigError { field: field.into(), message: message.to_string() })
}

/// Maps `f` over `items` on up to `workers` threads; output order follows input order.
pub fn par_map<T: Sync, R: Send>(items: &[T], workers: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    if workers <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let out: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers.min(items.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                out.lock().unwrap()[i] = Some(r);
            });
        }
    });
    out.into_inner().unwrap().into_iter().map(|r| r.expect("every item mapped")).collect()
}

pub struct Context {
    pub cfg: ExperimentConfig,
    pub workers: usize,
}

impl Context {
    fn algebra(&self) -> Result<Arc<Algebra>, Failure> {
        Algebra::su_scaled(self.cfg.algebra.n, self.cfg.algebra.c)
            .map(Arc::new)
            .map_err(|e| config_error("algebra", e))
    }

    /// Builds the field named by a config source; failures here are config errors.
    fn load_field(&self, name: &str, src: &FieldSource) -> Result<GaugeField, Failure> {
        let alg = self.algebra()?;
        match src {
            FieldSource::Bpst { lambda, radius, h } => {
                let dom = Arc::new(Domain::ball(*radius, *h).map_err(|e| config_error(name, e))?);
                bpst(*lambda, [0.0; 4], &alg, &dom).map_err(|e| config_error(name, e))
            }
            FieldSource::Random { domain, h, amplitude } => {
                let dom = Arc::new(Domain::from_kind(*domain, *h).map_err(|e| config_error(name, e))?);
                let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
                GaugeField::from_fn(&alg, &dom, |s, _, out| {
                    for o in out.iter_mut() {
                        let v: f64 = rng.random_range(-1.0..1.0);
                        *o = if dom.is_interior(s) { amplitude * v } else { 0.0 };
                    }
                })
                .map_err(|e| config_error(name, e))
            }
            FieldSource::Snapshot { path } => {
                let bytes = std::fs::read(path).map_err(|e| config_error(&format!("{name}.path"), e))?;
                let (header, field) = snapshot::decode(&bytes).map_err(|e| config_error(&format!("{name}.path"), e))?;
                if header.su_n != self.cfg.algebra.n || header.c != self.cfg.algebra.c {
                    return Err(config_error(
                        "algebra",
                        format!("snapshot is su({}) with c = {}, config asks for su({}) with c = {}", header.su_n, header.c, self.cfg.algebra.n, self.cfg.algebra.c),
                    ));
                }
                Ok(field)
            }
        }
    }
}

pub fn run(ctx: &Context, cmd: CommandKind, art: &mut Artifacts) -> Result<(), Failure> {
    match cmd {
        CommandKind::Verify => verify(ctx, art),
        CommandKind::Flow => flow_cmd(ctx, art),
        CommandKind::Spectrum => spectrum(ctx, art),
        CommandKind::Neck => neck(ctx, art),
        CommandKind::Bubble => bubble(ctx, art),
        CommandKind::Lorentz => lorentz(ctx, art),
    }
}

fn verify(ctx: &Context, art: &mut Artifacts) -> Result<(), Failure> {
    let card = run_battery(&ctx.cfg.verify)?;
    art.json("scorecard.json", &card)?;
    if card.pass {
        Ok(())
    } else {
        let failed: Vec<&str> = card.checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
        Err(Failure::Numerical(format!("battery reported failures: {failed:?} (see scorecard.json)")))
    }
}

#[derive(Serialize)]
struct FlowSummary {
    p: f64,
    steps: usize,
    converged: bool,
    target: f64,
    initial_energy: f64,
    final_energy: f64,
    final_residual: f64,
    el_residual_norm: f64,
    snapshot: Option<String>,
}

fn flow_cmd(ctx: &Context, art: &mut Artifacts) -> Result<(), Failure> {
    let fc = &ctx.cfg.flow;
    let p = PExponent::new(fc.p).map_err(|e| config_error("flow.p", e))?;
    let mut a0 = ctx.load_field("flow.field", &fc.field)?;
    if fc.perturbation > 0.0 {
        let dom = a0.domain().clone();
        let mut rng = ChaCha8Rng::seed_from_u64(ctx.cfg.seed ^ 0x5eed);
        let mut noise = a0.perturbation_zeros();
        let w = noise.site_width();
        for s in dom.interior_sites() {
            for o in &mut noise.data_mut()[s * w..(s + 1) * w] {
                *o = rng.random_range(-1.0..1.0);
            }
        }
        a0 = a0.perturbed(fc.perturbation, &noise)?;
    }
    let initial_energy = ym_p_energy(&a0, p);
    let res = flow(&a0, p, &fc.options)?;
    let rows: Vec<Vec<String>> = res.log.iter().map(flow_row).collect();
    art.csv("flow.csv", &["step", "energy", "residual_norm", "step_size"], &rows)?;
    let snapshot = if fc.snapshot {
        art.bytes("field.pym", &snapshot::encode(&res.field, art.hash())?)?;
        Some("field.pym".to_string())
    } else {
        None
    };
    let last = res.log.last();
    let summary = FlowSummary {
        p: fc.p,
        steps: res.log.len(),
        converged: res.converged,
        target: res.target,
        initial_energy,
        final_energy: ym_p_energy(&res.field, p),
        final_residual: last.map_or(f64::NAN, |r| r.residual_norm),
        el_residual_norm: el_residual(&res.field, p).norm,
        snapshot,
    };
    art.json("flow.json", &summary)?;
    Ok(())
}

fn flow_row(r: &FlowRecord) -> Vec<String> {
    vec![r.step.to_string(), num(Some(r.energy)), num(Some(r.residual_norm)), num(Some(r.step_size))]
}

#[derive(Serialize)]
struct SpectrumSummary {
    p: f64,
    dofs: usize,
    report: SpectralReport,
    sylvester: Option<SylvesterReport>,
}

fn spectrum(ctx: &Context, art: &mut Artifacts) -> Result<(), Failure> {
    let sc = &ctx.cfg.spectrum;
    let p = PExponent::new(sc.p).map_err(|e| config_error("spectrum.p", e))?;
    let mut a = ctx.load_field("spectrum.field", &sc.field)?;
    if sc.flow_steps > 0 {
        let opts = pym_core::functional::FlowOptions { steps: sc.flow_steps, ..Default::default() };
        a = flow(&a, p, &opts)?.field;
    }
    let dom = a.domain().clone();
    let weight = match sc.weight {
        WeightSpec::Constant { value } => WeightField::constant(&dom, value)?,
        WeightSpec::Random { lo, hi } => WeightField::random(&dom, lo, hi, ctx.cfg.seed)?,
    };
    let problem = assemble(&a, p, &weight, sc.form)?;
    let report = solve(&problem, &sc.solve)?;
    let rows: Vec<Vec<String>> =
        report.eigenvalues.iter().enumerate().map(|(i, l)| vec![i.to_string(), num(Some(*l))]).collect();
    art.csv("spectrum.csv", &["i", "eigenvalue"], &rows)?;
    let mut summary = SpectrumSummary { p: sc.p, dofs: problem.dofs(), report, sylvester: None };
    if sc.sylvester_weights > 0 {
        // write the spectrum first so it survives a failing invariance run
        art.json("spectrum.json", &summary)?;
        let weights = (0..sc.sylvester_weights)
            .map(|i| WeightField::random(&dom, 0.5, 2.0, ctx.cfg.seed.wrapping_add(1 + i as u64)))
            .collect::<pym_core::Result<Vec<_>>>()?;
        summary.sylvester = Some(sylvester_invariance_lattice(&problem, &weights, &sc.solve)?);
    }
    art.json("spectrum.json", &summary)?;
    Ok(())
}

fn neck(ctx: &Context, art: &mut Artifacts) -> Result<(), Failure> {
    let nc = &ctx.cfg.neck;
    let grid = parse_grid(&nc.p_grid).map_err(|e| config_error("neck.p_grid", e))?;
    let mut rows = Vec::new();
    let mut table = Vec::new();
    for &p in &grid {
        for &eps in &nc.eps {
            let k = NeckConstants::new(p, eps, nc.bochner_c)?;
            for (name, v) in k.named() {
                rows.push(long_row(Some(p), Some(eps), None, None, name, v));
            }
            table.push(k);
        }
    }
    art.csv("neck_constants.csv", &LONG_HEADER, &rows)?;
    art.json("neck_constants.json", &table)?;
    let w = &nc.weights;
    if w.points > 0 {
        let mut rows = Vec::new();
        for &p in &grid {
            for t in log_grid(w.r, w.big_r, w.points) {
                let x = [t, 0.0, 0.0, 0.0];
                let o = weight_omega(p, nc.bochner_c, w.big_r, w.r, x)?;
                let o2 = weight_omega2(w.big_r, w.r, x)?;
                rows.push(vec![num(Some(p)), num(Some(w.r)), num(Some(w.big_r)), num(Some(t)), num(Some(o)), num(Some(o2))]);
            }
        }
        art.csv("neck_weights.csv", &["p", "r", "R", "t", "omega", "omega2"], &rows)?;
    }
    if let Some(opts) = &nc.sweep {
        let sweep = neck_sweep(opts)?;
        let mut rows = Vec::new();
        for row in &sweep.rows {
            let (r, big_r) = (Some(row.r), Some(row.big_r));
            let q = &row.quantization;
            let mut push = |name: &str, v: f64| rows.push(long_row(Some(opts.p), None, r, big_r, name, v));
            push("lambda", row.lambda);
            push("dyadic_sup", q.dyadic.sup);
            push("ratio_l2", q.ratio_l2);
            push("ratio_weak", q.ratio_weak);
            push("ratio_l21", q.ratio_l21);
            if let Some(pw) = &row.pointwise {
                push("pointwise_constant", pw.constant);
            }
            push("positivity_min", row.positivity.min);
            push("positivity_mean", row.positivity.mean);
        }
        art.csv("neck_sweep.csv", &LONG_HEADER, &rows)?;
        art.json("neck_sweep.json", &sweep)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct BubbleSummary {
    ks: Vec<u32>,
    energy: Vec<EnergyIdentity>,
    energy_defect_decreasing: bool,
    p_schedule: Vec<PScheduleRow>,
    p_schedule_admissible: bool,
    index: Vec<IndexTable>,
    semicontinuity_holds: Option<bool>,
}

fn bubble(ctx: &Context, art: &mut Artifacts) -> Result<(), Failure> {
    let bc = &ctx.cfg.bubble;
    let ks = parse_ks(&bc.k).map_err(|e| config_error("bubble.k", e))?;
    let c = ctx.cfg.algebra.c;
    let per_k = par_map(&ks, ctx.workers, |&k| -> Result<(EnergyIdentity, PScheduleRow), pym_core::Error> {
        let e = energy_identity_check(&bc.family, k, c)?;
        let mut rep = p_schedule_check(&bc.family, &[k], bc.bound, bc.eps0, c)?;
        Ok((e, rep.rows.remove(0)))
    });
    let (mut energy, mut schedule) = (Vec::new(), Vec::new());
    for r in per_k {
        let (e, s) = r?;
        energy.push(e);
        schedule.push(s);
    }
    let tol = bc.bound * 1e-12;
    let admissible = schedule.iter().all(|r| r.product_prescribed <= bc.bound + tol && r.product_detected <= bc.bound + tol);
    let rows: Vec<Vec<String>> = energy
        .iter()
        .zip(&schedule)
        .map(|(e, s)| {
            vec![
                e.k.to_string(),
                num(Some(s.p)),
                num(Some(s.delta)),
                num(Some(s.detected)),
                num(Some(s.product_prescribed)),
                num(Some(s.product_detected)),
                num(Some(e.total)),
                num(Some(e.defect)),
                s.holder_ok.to_string(),
            ]
        })
        .collect();
    art.csv(
        "bubble.csv",
        &["k", "p", "delta", "detected_scale", "product_prescribed", "product_detected", "energy", "energy_defect", "holder_ok"],
        &rows,
    )?;
    let mut summary = BubbleSummary {
        energy_defect_decreasing: energy.windows(2).all(|w| w[1].defect.abs() < w[0].defect.abs() || w[0].defect == 0.0),
        ks: ks.clone(),
        energy,
        p_schedule: schedule,
        p_schedule_admissible: admissible,
        index: vec![],
        semicontinuity_holds: None,
    };
    art.json("bubble.json", &summary)?;
    if let Some(opts) = &bc.index {
        let alg = ctx.algebra()?;
        let tables = par_map(&bc.variants, ctx.workers, |&v| index_semicontinuity_experiment(&bc.family, &alg, &ks, v, opts));
        let mut rows = Vec::new();
        let mut failure = None;
        for t in tables {
            match t {
                Ok(t) => {
                    for r in &t.rows {
                        let v = serde_json::to_value(t.variant).unwrap_or_default();
                        let mut row = vec![r.k.to_string(), v.as_str().unwrap_or("").to_string(), num(Some(r.p))];
                        match &r.counts {
                            Some(c) => row.extend([c.index, c.nullity, c.extended_index, c.nullity_fixed, c.extended_fixed].map(|x| x.to_string())),
                            None => row.extend(std::iter::repeat_n(String::new(), 5)),
                        }
                        row.extend([r.lower_ok, r.upper_ok, r.upper_ok_fixed].map(|b| b.to_string()));
                        row.push(r.error.clone().unwrap_or_default());
                        rows.push(row);
                    }
                    summary.index.push(t);
                }
                Err(e) => failure = Some(e),
            }
        }
        art.csv(
            "bubble_index.csv",
            &["k", "variant", "p", "index", "nullity", "extended_index", "nullity_fixed", "extended_fixed", "lower_ok", "upper_ok", "upper_ok_fixed", "error"],
            &rows,
        )?;
        summary.semicontinuity_holds = Some(summary.index.iter().all(IndexTable::holds));
        art.json("bubble.json", &summary)?;
        if let Some(e) = failure {
            return Err(e.into());
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct LorentzSummary {
    /// `‖|x|^{-1}‖_{L^{4,2}(B_R \ B_{R/2})}` per R and the max/min spread.
    inverse: Vec<(f64, f64)>,
    inverse_spread: f64,
    /// `|‖f‖_{L^{2,2}} - ‖f‖_{L²}| / ‖f‖_{L²}` on the first inverse sample.
    pp_defect: f64,
    /// `‖|x|^{-2}‖_{L^{2,∞}(B_R \ B_a)}` per R against `(π²/2)^{1/2}`.
    inverse_square: Vec<(f64, f64)>,
    inverse_square_exact: f64,
    neck: Vec<QuantizationReport>,
}

fn lorentz(ctx: &Context, art: &mut Artifacts) -> Result<(), Failure> {
    let lc = &ctx.cfg.lorentz;
    let mut rows = Vec::new();
    let inverse = par_map(&lc.inverse_radii, ctx.workers, |&big_r| -> pym_core::Result<(f64, f64, f64)> {
        let f = lattice_annulus_samples(0.5 * big_r, big_r, lc.inverse_h, |x| 1.0 / norm(x))?;
        let pp = (lorentz_norm(&f, 2.0, Some(2.0))? - lebesgue_norm(&f, 2.0)).abs() / lebesgue_norm(&f, 2.0);
        Ok((big_r, lorentz_norm(&f, 4.0, Some(2.0))?, pp))
    })
    .into_iter()
    .collect::<pym_core::Result<Vec<_>>>()?;
    for (big_r, v, pp) in &inverse {
        rows.push(long_row(None, None, Some(0.5 * big_r), Some(*big_r), "l42_inverse", *v));
        rows.push(long_row(None, None, Some(0.5 * big_r), Some(*big_r), "pp_defect", *pp));
    }
    let vals: Vec<f64> = inverse.iter().map(|t| t.1).collect();
    let spread = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max) / vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let exact = (PI * PI / 2.0).sqrt();
    let a = lc.inverse_square_inner;
    let inverse_square = par_map(&lc.inverse_square_radii, ctx.workers, |&big_r| -> pym_core::Result<(f64, f64)> {
        let f = lattice_annulus_samples(a, big_r, lc.inverse_square_h, |x| 1.0 / norm(x).powi(2))?;
        Ok((big_r, lorentz_norm(&f, 2.0, None)?))
    })
    .into_iter()
    .collect::<pym_core::Result<Vec<_>>>()?;
    for (big_r, v) in &inverse_square {
        rows.push(long_row(None, None, Some(a), Some(*big_r), "l2weak_inverse_square", *v));
        rows.push(long_row(None, None, Some(a), Some(*big_r), "l2weak_inverse_square_rel_error", v / exact - 1.0));
    }
    let c = ctx.cfg.algebra.c;
    let eta = lc.neck_eta;
    let neck = par_map(&lc.neck_levels, ctx.workers, |&j| -> pym_core::Result<QuantizationReport> {
        let r = eta / 2f64.powi(j as i32);
        let g = GluedBubble::new(BackgroundSpec::Flat, BubbleSpec::new([0.0; 4], lc.neck_lambda_over_r * r)?, eta)?;
        neck_quantization_radial(|t| (c * g.radial_density(t)).sqrt(), r, eta, lc.panels_per_octave)
    })
    .into_iter()
    .collect::<pym_core::Result<Vec<_>>>()?;
    for q in &neck {
        for (name, v) in [("dyadic_sup", q.dyadic.sup), ("ratio_l2", q.ratio_l2), ("ratio_weak", q.ratio_weak), ("ratio_l21", q.ratio_l21)] {
            rows.push(long_row(None, None, Some(q.r), Some(q.big_r), name, v));
        }
    }
    art.csv("lorentz.csv", &LONG_HEADER, &rows)?;
    let summary = LorentzSummary {
        pp_defect: inverse.first().map_or(0.0, |t| t.2),
        inverse: inverse.iter().map(|t| (t.0, t.1)).collect(),
        inverse_spread: spread,
        inverse_square,
        inverse_square_exact: exact,
        neck,
    };
    art.json("lorentz.json", &summary)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn par_map_keeps_order() {
        let v: Vec<u64> = (0..37).collect();
        let seq = par_map(&v, 1, |x| x * x);
        assert_eq!(par_map(&v, 4, |x| x * x), seq);
    }
}
