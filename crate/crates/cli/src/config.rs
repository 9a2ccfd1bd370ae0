use std::f64::consts::PI;
use std::path::PathBuf;

use pym_core::functional::{FlowOptions, FormKind, PExponent};
use pym_core::inequalities::BatteryOptions;
use pym_core::instanton::{BubblingFamily, FamilyVariant, IndexOptions, MIN_SCALE_RATIO};
use pym_core::lattice::DomainKind;
use pym_core::neck::sweep::NeckSweepOptions;
use pym_core::neck::NeckConstants;
use pym_core::spectral::SolveOptions;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandKind {
    Verify,
    Flow,
    Spectrum,
    Neck,
    Bubble,
    Lorentz,
}

impl CommandKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Verify => "verify",
            Self::Flow => "flow",
            Self::Spectrum => "spectrum",
            Self::Neck => "neck",
            Self::Bubble => "bubble",
            Self::Lorentz => "lorentz",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    #[serde(default)]
    pub command: Option<CommandKind>,
    #[serde(default)]
    pub seed: u64,
    /// Output directory; `--out` takes precedence.  Not part of the hash.
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub algebra: AlgebraConfig,
    #[serde(default)]
    pub verify: BatteryOptions,
    #[serde(default)]
    pub flow: FlowConfig,
    #[serde(default)]
    pub spectrum: SpectrumConfig,
    #[serde(default)]
    pub neck: NeckConfig,
    #[serde(default)]
    pub bubble: BubbleConfig,
    #[serde(default)]
    pub lorentz: LorentzConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            command: None,
            seed: 0,
            out: None,
            algebra: AlgebraConfig::default(),
            verify: BatteryOptions::default(),
            flow: FlowConfig::default(),
            spectrum: SpectrumConfig::default(),
            neck: NeckConfig::default(),
            bubble: BubbleConfig::default(),
            lorentz: LorentzConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlgebraConfig {
    /// Matrix size N of su(N).
    pub n: usize,
    /// Inner product `-c tr`.
    pub c: f64,
}

impl Default for AlgebraConfig {
    fn default() -> Self {
        Self { n: 2, c: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSource {
    /// BPST at the origin sampled on a ball.
    Bpst { lambda: f64, radius: f64, h: f64 },
    /// Uniform noise of the given amplitude on interior sites.
    Random { domain: DomainKind, h: f64, amplitude: f64 },
    Snapshot { path: PathBuf },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowConfig {
    pub field: FieldSource,
    pub p: f64,
    /// Amplitude of the seeded interior noise added before flowing.
    pub perturbation: f64,
    pub options: FlowOptions,
    /// Write the final field as `field.pym`.
    pub snapshot: bool,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            field: FieldSource::Bpst { lambda: 1.0, radius: 2.0, h: 0.25 },
            p: 2.2,
            perturbation: 0.05,
            options: FlowOptions { steps: 50, ..FlowOptions::default() },
            snapshot: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WeightSpec {
    Constant { value: f64 },
    /// Seeded uniform weights in `[lo, hi]`.
    Random { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumConfig {
    pub field: FieldSource,
    pub p: f64,
    pub form: FormKind,
    pub weight: WeightSpec,
    /// Gradient-flow steps applied before assembling.
    pub flow_steps: usize,
    pub solve: SolveOptions,
    /// Extra random positive weights for the Sylvester invariance report; 0 skips it.
    pub sylvester_weights: usize,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        Self {
            field: FieldSource::Bpst { lambda: 1.0, radius: 1.0, h: 0.25 },
            p: 2.0,
            form: FormKind::QCal,
            weight: WeightSpec::Constant { value: 1.0 },
            flow_steps: 0,
            solve: SolveOptions { k: 12, ..SolveOptions::default() },
            sylvester_weights: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightTableConfig {
    pub big_r: f64,
    pub r: f64,
    /// Log-spaced radii in `[r, R]`; 0 skips the table.
    pub points: usize,
}

impl Default for WeightTableConfig {
    fn default() -> Self {
        Self { big_r: 1.0, r: 1.0 / 64.0, points: 25 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NeckConfig {
    /// `start:stop:step`, inclusive.
    pub p_grid: String,
    pub eps: Vec<f64>,
    pub bochner_c: f64,
    pub weights: WeightTableConfig,
    /// Glued-bubble neck sweep; absent skips it.
    pub sweep: Option<NeckSweepOptions>,
}

impl Default for NeckConfig {
    fn default() -> Self {
        Self { p_grid: "2:2.1:0.01".into(), eps: vec![0.0], bochner_c: 1.0, weights: WeightTableConfig::default(), sweep: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BubbleConfig {
    pub family: BubblingFamily,
    /// `a..b` inclusive, or a comma list.
    pub k: String,
    /// Bound B on `(p_k - 2) log(1/δ_k)`.
    pub bound: f64,
    /// Energy threshold for bubble-scale detection.
    pub eps0: f64,
    /// Index-semicontinuity experiment; absent skips it.
    pub index: Option<IndexOptions>,
    pub variants: Vec<FamilyVariant>,
}

impl Default for BubbleConfig {
    fn default() -> Self {
        Self {
            family: BubblingFamily::default_family(0.5),
            k: "1..8".into(),
            bound: 1.0,
            eps0: 8.0 * PI * PI,
            index: Some(IndexOptions::default()),
            variants: vec![FamilyVariant::Glued, FamilyVariant::FlowRelaxed],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LorentzConfig {
    /// Lattice spacing for the `|x|^{-1}` scale-invariance table.
    pub inverse_h: f64,
    /// Outer radii R of the annuli `B_R \ B_{R/2}`.
    pub inverse_radii: Vec<f64>,
    /// Lattice spacing, inner cut and outer radii for `|x|^{-2}` in L^{2,∞}.
    pub inverse_square_h: f64,
    pub inverse_square_inner: f64,
    pub inverse_square_radii: Vec<f64>,
    /// Glued-bubble neck quantization: bubble scale, cutoff and levels j with r = η / 2^j.
    pub neck_lambda_over_r: f64,
    pub neck_eta: f64,
    pub neck_levels: Vec<u32>,
    pub panels_per_octave: usize,
}

impl Default for LorentzConfig {
    fn default() -> Self {
        Self {
            inverse_h: 1.0 / 32.0,
            inverse_radii: vec![1.0, 0.5, 0.25],
            inverse_square_h: 1.0 / 48.0,
            inverse_square_inner: 0.125,
            inverse_square_radii: vec![0.25, 0.5, 1.0],
            neck_lambda_over_r: 1.0 / 16.0,
            neck_eta: 0.5,
            neck_levels: vec![3, 4, 5, 6],
            panels_per_octave: 64,
        }
    }
}

/// Field-level validation failure.
#[derive(Debug)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

fn bad(field: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError { field: field.into(), message: message.into() }
}

fn positive(field: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(bad(field, format!("must be positive and finite, got {v}")))
    }
}

fn exponent(field: &str, p: f64) -> Result<(), ConfigError> {
    PExponent::new(p).map(|_| ()).map_err(|e| bad(field, e.to_string()))
}

pub fn parse(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        bad(if path == "." { "config".to_string() } else { path }, e.into_inner().to_string())
    })
}

/// Parses `start:stop:step`, inclusive of `stop` up to rounding.
pub fn parse_grid(s: &str) -> Result<Vec<f64>, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let nums = parts.iter().map(|x| x.trim().parse::<f64>()).collect::<Result<Vec<_>, _>>().map_err(|e| format!("{s:?}: {e}"))?;
    match nums[..] {
        [v] => Ok(vec![v]),
        [a, b, h] if h > 0.0 && b >= a => {
            let n = ((b - a) / h + 1e-9).floor() as usize;
            // rounding to 12 digits keeps grid points like 2.03 printable as written
            Ok((0..=n).map(|i| ((a + i as f64 * h) * 1e12).round() / 1e12).collect())
        }
        _ => Err(format!("expected start:stop:step with step > 0 and stop >= start, got {s:?}")),
    }
}

/// Parses `a..b` (inclusive) or a comma list of nonnegative integers.
pub fn parse_ks(s: &str) -> Result<Vec<u32>, String> {
    let err = |e: std::num::ParseIntError| format!("{s:?}: {e}");
    let mut ks: Vec<u32> = if let Some((a, b)) = s.split_once("..") {
        let (a, b) = (a.trim().parse::<u32>().map_err(err)?, b.trim().trim_start_matches('=').parse::<u32>().map_err(err)?);
        if b < a {
            return Err(format!("empty range {s:?}"));
        }
        (a..=b).collect()
    } else {
        s.split(',').map(|x| x.trim().parse::<u32>().map_err(err)).collect::<Result<_, _>>()?
    };
    ks.sort_unstable();
    ks.dedup();
    if ks.is_empty() {
        return Err("no k values".into());
    }
    Ok(ks)
}

impl ExperimentConfig {
    /// Pushes the master seed into every section that draws random numbers,
    /// so the hashed config shows the seeds actually used.
    pub fn propagate_seed(&mut self) {
        self.verify.fuzz.seed = self.seed;
        self.spectrum.solve.seed = self.seed;
        if let Some(s) = &mut self.neck.sweep {
            s.seed = self.seed;
        }
        if let Some(i) = &mut self.bubble.index {
            i.solve.seed = self.seed;
        }
    }

    /// Hex sha256 of the effective config without the output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = None;
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        format!("{:x}", Sha256::digest(&bytes))
    }

    pub fn validate(&self, cmd: CommandKind) -> Result<(), ConfigError> {
        if self.version != CONFIG_VERSION {
            return Err(bad("version", format!("unsupported schema version {} (expected {CONFIG_VERSION})", self.version)));
        }
        if self.algebra.n < 2 {
            return Err(bad("algebra.n", format!("need N >= 2, got {}", self.algebra.n)));
        }
        positive("algebra.c", self.algebra.c)?;
        match cmd {
            CommandKind::Verify => {
                let v = &self.verify;
                if v.fuzz.samples == 0 {
                    return Err(bad("verify.fuzz.samples", "must be at least 1"));
                }
                if !(v.fuzz.log_min < v.fuzz.log_max) {
                    return Err(bad("verify.fuzz.log_min", "must be below log_max"));
                }
                if v.fuzz.max_dim == 0 {
                    return Err(bad("verify.fuzz.max_dim", "must be at least 1"));
                }
                // the algebraic lemmas hold on the closed range [2, 3]
                for (i, p) in v.fuzz.p_grid.iter().enumerate() {
                    if !(2.0..=3.0).contains(p) {
                        return Err(bad(format!("verify.fuzz.p_grid[{i}]"), format!("need 2 <= p <= 3, got {p}")));
                    }
                }
                for (i, r) in v.kato_yau_resolutions.iter().enumerate() {
                    if !(*r >= MIN_SCALE_RATIO) {
                        return Err(bad(format!("verify.kato_yau_resolutions[{i}]"), format!("need lambda/h >= {MIN_SCALE_RATIO}")));
                    }
                }
                positive("verify.hardy_h", v.hardy_h)?;
            }
            CommandKind::Flow => {
                exponent("flow.p", self.flow.p)?;
                self.validate_field("flow.field", &self.flow.field)?;
                if !(self.flow.perturbation >= 0.0 && self.flow.perturbation.is_finite()) {
                    return Err(bad("flow.perturbation", "must be nonnegative"));
                }
            }
            CommandKind::Spectrum => {
                let s = &self.spectrum;
                exponent("spectrum.p", s.p)?;
                self.validate_field("spectrum.field", &s.field)?;
                if s.solve.k == 0 {
                    return Err(bad("spectrum.solve.k", "must be at least 1"));
                }
                match s.weight {
                    WeightSpec::Constant { value } => positive("spectrum.weight.value", value)?,
                    WeightSpec::Random { lo, hi } => {
                        positive("spectrum.weight.lo", lo)?;
                        if !(hi >= lo && hi.is_finite()) {
                            return Err(bad("spectrum.weight.hi", "must be finite and at least lo"));
                        }
                    }
                }
            }
            CommandKind::Neck => {
                let n = &self.neck;
                let grid = parse_grid(&n.p_grid).map_err(|e| bad("neck.p_grid", e))?;
                if n.eps.is_empty() {
                    return Err(bad("neck.eps", "need at least one value"));
                }
                for p in &grid {
                    for e in &n.eps {
                        NeckConstants::new(*p, *e, n.bochner_c).map_err(|err| bad("neck.p_grid", format!("p = {p}, eps = {e}: {err}")))?;
                    }
                }
                if n.weights.points > 0 {
                    positive("neck.weights.r", n.weights.r)?;
                    if !(n.weights.big_r > n.weights.r) {
                        return Err(bad("neck.weights.big_r", "must exceed r"));
                    }
                }
                if let Some(s) = &n.sweep {
                    exponent("neck.sweep.p", s.p)?;
                    positive("neck.sweep.big_r", s.big_r)?;
                    positive("neck.sweep.lambda_over_r", s.lambda_over_r)?;
                    if s.levels.iter().any(|&j| j < 3) {
                        return Err(bad("neck.sweep.levels", "levels must be at least 3 (R/r >= 8)"));
                    }
                }
            }
            CommandKind::Bubble => {
                let b = &self.bubble;
                b.family.validate().map_err(|e| bad("bubble.family", e.to_string()))?;
                parse_ks(&b.k).map_err(|e| bad("bubble.k", e))?;
                positive("bubble.bound", b.bound)?;
                positive("bubble.eps0", b.eps0)?;
                if self.algebra.n != 2 {
                    return Err(bad("algebra.n", "bubbling families are su(2)"));
                }
                if let Some(i) = &b.index {
                    if !(i.lambda_over_h >= MIN_SCALE_RATIO) {
                        return Err(bad("bubble.index.lambda_over_h", format!("need >= {MIN_SCALE_RATIO}")));
                    }
                    positive("bubble.index.sites_per_radius", i.sites_per_radius)?;
                    if i.solve.k == 0 {
                        return Err(bad("bubble.index.solve.k", "must be at least 1"));
                    }
                }
            }
            CommandKind::Lorentz => {
                let l = &self.lorentz;
                positive("lorentz.inverse_h", l.inverse_h)?;
                positive("lorentz.inverse_square_h", l.inverse_square_h)?;
                positive("lorentz.inverse_square_inner", l.inverse_square_inner)?;
                for (i, r) in l.inverse_radii.iter().enumerate() {
                    positive(&format!("lorentz.inverse_radii[{i}]"), *r)?;
                }
                for (i, r) in l.inverse_square_radii.iter().enumerate() {
                    if !(*r > l.inverse_square_inner) {
                        return Err(bad(format!("lorentz.inverse_square_radii[{i}]"), "must exceed the inner cut"));
                    }
                }
                positive("lorentz.neck_lambda_over_r", l.neck_lambda_over_r)?;
                if !(l.neck_eta > 0.0 && l.neck_eta < 1.0) {
                    return Err(bad("lorentz.neck_eta", "need 0 < eta < 1"));
                }
                if l.neck_levels.iter().any(|&j| j < 3) {
                    return Err(bad("lorentz.neck_levels", "levels must be at least 3"));
                }
                if l.panels_per_octave == 0 {
                    return Err(bad("lorentz.panels_per_octave", "must be at least 1"));
                }
            }
        }
        Ok(())
    }

    fn validate_field(&self, name: &str, f: &FieldSource) -> Result<(), ConfigError> {
        match f {
            FieldSource::Bpst { lambda, radius, h } => {
                positive(&format!("{name}.h"), *h)?;
                positive(&format!("{name}.radius"), *radius)?;
                if !(*lambda >= MIN_SCALE_RATIO * h) {
                    return Err(bad(format!("{name}.lambda"), format!("need lambda >= {MIN_SCALE_RATIO} h")));
                }
                if self.algebra.n != 2 {
                    return Err(bad("algebra.n", "the BPST field is su(2)"));
                }
            }
            FieldSource::Random { domain, h, amplitude } => {
                positive(&format!("{name}.h"), *h)?;
                pym_core::lattice::Domain::from_kind(*domain, *h).map_err(|e| bad(format!("{name}.domain"), e.to_string()))?;
                if !(*amplitude >= 0.0 && amplitude.is_finite()) {
                    return Err(bad(format!("{name}.amplitude"), "must be nonnegative"));
                }
            }
            FieldSource::Snapshot { path } => {
                if !path.is_file() {
                    return Err(bad(format!("{name}.path"), format!("{} is not a readable file", path.display())));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids_and_ranges() {
        let g = parse_grid("2:2.1:0.01").unwrap();
        assert_eq!(g.len(), 11);
        assert_eq!(g[3], 2.03);
        assert_eq!(g[10], 2.1);
        assert_eq!(parse_grid("2.5").unwrap(), vec![2.5]);
        assert!(parse_grid("2:1:0.1").is_err());
        assert_eq!(parse_ks("1..8").unwrap(), (1..=8).collect::<Vec<_>>());
        assert_eq!(parse_ks("3, 1,3").unwrap(), vec![1, 3]);
        assert!(parse_ks("4..2").is_err());
    }

    #[test]
    fn unknown_keys_are_rejected_with_a_path() {
        let e = parse(r#"{"version": 1, "flow": {"p": 2.1, "stepz": 3}}"#).unwrap_err();
        assert!(e.field.starts_with("flow"), "{e}");
        let e = parse(r#"{"version": 1, "neck": {"weights": {"points": "x"}}}"#).unwrap_err();
        assert_eq!(e.field, "neck.weights.points");
        assert!(parse(r#"{"seed": 1}"#).is_err());
    }

    #[test]
    fn validation_names_the_field() {
        let mut c = ExperimentConfig::default();
        c.flow.p = 1.5;
        assert_eq!(c.validate(CommandKind::Flow).unwrap_err().field, "flow.p");
        c.version = 2;
        assert_eq!(c.validate(CommandKind::Verify).unwrap_err().field, "version");
        let mut c = ExperimentConfig::default();
        c.bubble.k = "x".into();
        assert_eq!(c.validate(CommandKind::Bubble).unwrap_err().field, "bubble.k");
        for cmd in [CommandKind::Verify, CommandKind::Flow, CommandKind::Spectrum, CommandKind::Neck, CommandKind::Bubble, CommandKind::Lorentz] {
            if let Err(e) = ExperimentConfig::default().validate(cmd) {
                panic!("{cmd:?}: {e}");
            }
        }
    }

    #[test]
    fn hash_ignores_output_dir() {
        let mut a = ExperimentConfig::default();
        let h = a.hash();
        a.out = Some("elsewhere".into());
        assert_eq!(a.hash(), h);
        a.seed = 9;
        assert_ne!(a.hash(), h);
    }
}
