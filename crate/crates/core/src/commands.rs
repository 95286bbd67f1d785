//! Subcommand implementations behind the `semiblind-crb` binary.
//!
//! Each command takes a resolved [`RunConfig`] and returns the rendered
//! report together with the process exit code. Reports embed
//! [`SCHEMA_VERSION`] and the resolved configuration.

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::config::{Fault, GammaConfig, OutputFormat, PilotConfig, RunConfig, SweepConfig};
use crate::crb::{self, CrbReport};
use crate::error::CrbError;
use crate::linalg::{self, block_diag, CMat};
use crate::montecarlo::RngSpec;
use crate::oracle::{self, FdConfig, NoiseModel};
use crate::report::ComplexMatrixJson;
use crate::scenario::Scenario;
use crate::simulate::{self, draw_noise};
use crate::system::{self, PrecoderKind};

pub const SCHEMA_VERSION: u32 = 1;

/// Reserved stream for the finite-difference noise draws of `verify`.
pub const STREAM_VERIFY: u64 = u64::MAX - 3;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_NON_IDENTIFIABLE: i32 = 2;
pub const EXIT_ATTAINABILITY: i32 = 3;
pub const EXIT_VERIFY: i32 = 4;

pub const TOL_BASES: f64 = 1e-10;
pub const TOL_RESIDUAL: f64 = 1e-10;
pub const TOL_TOEPLITZ: f64 = 1e-12;
pub const TOL_SCORE_FD: f64 = 1e-6;
pub const TOL_FIM_MC: f64 = 0.05;
pub const TOL_THREE_FORM: f64 = 1e-9;
pub const TOL_TRACE_IDENTITY: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("non-identifiable: {0}")]
    NonIdentifiable(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::NonIdentifiable(_) => EXIT_NON_IDENTIFIABLE,
        }
    }
}

impl From<CrbError> for CliError {
    fn from(e: CrbError) -> Self {
        match e {
            CrbError::NonIdentifiable { .. } => CliError::NonIdentifiable(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

/// Rendered report plus exit status.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommandOutput {
    pub text: String,
    pub exit_code: i32,
}

/// Command-line values that take precedence over the file. The output path
/// is handled by the caller so it never leaks into the report.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub format: Option<OutputFormat>,
    pub trials: Option<usize>,
    pub seed: Option<u64>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(t) = self.trials {
            cfg.trials = t;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(f) = self.format {
            cfg.output.format = Some(f);
        }
    }
}

/// Runs `f` on a dedicated pool of `threads` workers, or on the global pool.
pub fn with_threads<T, F>(threads: Option<usize>, f: F) -> Result<T, CliError>
where
    T: Send,
    F: FnOnce() -> Result<T, CliError> + Send,
{
    match threads {
        None => f(),
        Some(0) => Err(CliError::Config("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Config(e.to_string()))?
            .install(f),
    }
}

/// 17 significant digits, round-trip safe.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn header(command: &str, cfg: &RunConfig) -> Result<serde_json::Map<String, Value>, CliError> {
    let mut map = serde_json::Map::new();
    map.insert("schema_version".into(), json!(SCHEMA_VERSION));
    map.insert("command".into(), json!(command));
    map.insert(
        "config".into(),
        serde_json::to_value(cfg).map_err(|e| CliError::Config(e.to_string()))?,
    );
    Ok(map)
}

fn csv_preamble(cfg: &RunConfig) -> Result<String, CliError> {
    let config = serde_json::to_string(cfg).map_err(|e| CliError::Config(e.to_string()))?;
    Ok(format!("# schema_version: {SCHEMA_VERSION}\n# config: {config}\n"))
}

fn render(map: serde_json::Map<String, Value>) -> String {
    let mut text = serde_json::to_string_pretty(&Value::Object(map)).expect("JSON values serialize");
    text.push('\n');
    text
}

fn json_only(cfg: &RunConfig, command: &str) -> Result<(), CliError> {
    match cfg.output.format {
        Some(OutputFormat::Csv) => Err(CliError::Config(format!("{command} only writes JSON"))),
        _ => Ok(()),
    }
}

fn dims_json(sc: &Scenario) -> Value {
    let d = sc.dims;
    json!({ "m": d.m, "l": d.l, "n": d.n, "p": d.p() })
}

/// Channel bound for the configured scenario.
pub fn cmd_compute(cfg: &RunConfig) -> Result<CommandOutput, CliError> {
    let gamma = cfg.gamma.single()?;
    let sc = cfg.scenario(gamma)?;
    let report = sc.report()?;
    let text = match cfg.output.format.unwrap_or(OutputFormat::Json) {
        OutputFormat::Json => {
            let mut map = header("compute", cfg)?;
            map.insert("dims".into(), dims_json(&sc));
            map.insert("gamma".into(), json!(gamma));
            map.insert("precoder".into(), json!(sc.precoder.kind));
            map.insert("pilot_count".into(), json!(sc.pilots.count()));
            map.insert("crb_h".into(), json!(ComplexMatrixJson::from(&report.crb_h)));
            map.insert("trace_bound".into(), json!(report.trace_bound));
            map.insert("singular_values".into(), json!(report.singular_values));
            render(map)
        }
        OutputFormat::Csv => {
            let mut out = csv_preamble(cfg)?;
            out.push_str("row,col,re,im\n");
            let m = &report.crb_h;
            for r in 0..m.nrows() {
                for c in 0..m.ncols() {
                    let v = m[(r, c)];
                    out.push_str(&format!("{r},{c},{},{}\n", fmt_f64(v.re), fmt_f64(v.im)));
                }
            }
            out
        }
    };
    Ok(CommandOutput {
        text,
        exit_code: EXIT_OK,
    })
}

/// One evaluated sweep point; `report` is `None` when non-identifiable.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub value: String,
    pub report: Option<CrbReport>,
}

#[derive(Debug, Clone)]
enum SweepPoint {
    Gamma(f64),
    Pilots(usize),
    Precoder(PrecoderKind),
}

impl SweepPoint {
    fn label(&self) -> String {
        match self {
            SweepPoint::Gamma(g) => fmt_f64(*g),
            SweepPoint::Pilots(k) => k.to_string(),
            SweepPoint::Precoder(kind) => serde_json::to_value(kind)
                .ok()
                .and_then(|v| v.as_str().map(str::to_owned))
                .unwrap_or_default(),
        }
    }
}

fn sweep_plan(cfg: &RunConfig) -> Result<(&'static str, Vec<SweepPoint>), CliError> {
    match (&cfg.sweep, &cfg.gamma) {
        (None, GammaConfig::Range { .. }) | (Some(SweepConfig::Gamma), _) => Ok((
            "gamma",
            cfg.gamma.points()?.into_iter().map(SweepPoint::Gamma).collect(),
        )),
        (Some(SweepConfig::Pilots { start, stop, step }), _) => {
            if *step == 0 || start > stop {
                return Err(CliError::Config("pilot sweep needs start <= stop and step >= 1".into()));
            }
            Ok((
                "pilots",
                (*start..=*stop).step_by(*step).map(SweepPoint::Pilots).collect(),
            ))
        }
        (Some(SweepConfig::Precoder { kinds }), _) => {
            Ok(("precoder", kinds.iter().copied().map(SweepPoint::Precoder).collect()))
        }
        (None, GammaConfig::Value(_)) => Err(CliError::Config(
            "sweep needs a [sweep] section or a gamma range".into(),
        )),
    }
}

/// Evaluates every sweep point in order; non-identifiable points are kept
/// as empty rows.
pub fn sweep_rows(cfg: &RunConfig) -> Result<(&'static str, Vec<SweepRow>), CliError> {
    let (variable, plan) = sweep_plan(cfg)?;
    let fixed_gamma = match variable {
        "gamma" => None,
        _ => Some(cfg.gamma.single()?),
    };
    let base = match variable {
        "gamma" => Some(cfg.scenario(1.0)?),
        _ => None,
    };
    let rows: Vec<Result<SweepRow, CliError>> = plan
        .par_iter()
        .map(|point| {
            let sc = match point {
                SweepPoint::Gamma(g) => base.as_ref().expect("gamma sweep base").with_gamma(*g),
                SweepPoint::Pilots(k) => cfg.scenario_with(
                    fixed_gamma.expect("fixed gamma"),
                    &PilotConfig::First { count: *k },
                    cfg.precoder.kind,
                ),
                SweepPoint::Precoder(kind) => {
                    cfg.scenario_with(fixed_gamma.expect("fixed gamma"), &cfg.pilots, *kind)
                }
            }?;
            let report = match sc.report() {
                Ok(r) => Some(r),
                Err(CrbError::NonIdentifiable { .. }) => None,
                Err(e) => return Err(e.into()),
            };
            Ok(SweepRow {
                value: point.label(),
                report,
            })
        })
        .collect();
    Ok((variable, rows.into_iter().collect::<Result<_, _>>()?))
}

pub fn cmd_sweep(cfg: &RunConfig) -> Result<CommandOutput, CliError> {
    let (variable, rows) = sweep_rows(cfg)?;
    let min_max = |r: &CrbReport| {
        let sv = &r.singular_values;
        (sv.last().copied().unwrap_or(f64::NAN), sv.first().copied().unwrap_or(f64::NAN))
    };
    let text = match cfg.output.format.unwrap_or(OutputFormat::Csv) {
        OutputFormat::Csv => {
            let mut out = csv_preamble(cfg)?;
            out.push_str("sweep_variable,trace_bound,min_singular,max_singular,non_identifiable\n");
            for row in &rows {
                match &row.report {
                    Some(r) => {
                        let (lo, hi) = min_max(r);
                        out.push_str(&format!(
                            "{},{},{},{},false\n",
                            row.value,
                            fmt_f64(r.trace_bound),
                            fmt_f64(lo),
                            fmt_f64(hi)
                        ));
                    }
                    None => out.push_str(&format!("{},,,,true\n", row.value)),
                }
            }
            out
        }
        OutputFormat::Json => {
            let mut map = header("sweep", cfg)?;
            map.insert("variable".into(), json!(variable));
            let list: Vec<Value> = rows
                .iter()
                .map(|row| match &row.report {
                    Some(r) => {
                        let (lo, hi) = min_max(r);
                        json!({
                            "sweep_variable": row.value,
                            "trace_bound": r.trace_bound,
                            "min_singular": lo,
                            "max_singular": hi,
                            "non_identifiable": false,
                        })
                    }
                    None => json!({ "sweep_variable": row.value, "non_identifiable": true }),
                })
                .collect();
            map.insert("rows".into(), Value::Array(list));
            render(map)
        }
    };
    Ok(CommandOutput {
        text,
        exit_code: EXIT_OK,
    })
}

/// LS attainability experiment on an all-pilot configuration.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<CommandOutput, CliError> {
    json_only(cfg, "simulate")?;
    let gamma = cfg.gamma.single()?;
    let sc = cfg.scenario(gamma)?;
    let report = simulate::run_attainability_experiment(&sc, cfg.trials, cfg.seed)?;
    let mut map = header("simulate", cfg)?;
    map.insert("dims".into(), dims_json(&sc));
    map.insert("gamma".into(), json!(gamma));
    let flags: Vec<&str> = if report.insufficient_trials {
        vec!["insufficient trials"]
    } else {
        Vec::new()
    };
    map.insert("flags".into(), json!(flags));
    map.insert("pass".into(), json!(report.pass));
    map.insert(
        "report".into(),
        serde_json::to_value(&report).map_err(|e| CliError::Config(e.to_string()))?,
    );
    Ok(CommandOutput {
        text: render(map),
        exit_code: if report.pass { EXIT_OK } else { EXIT_ATTAINABILITY },
    })
}

/// Outcome of a single verification check.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub metric: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl Check {
    fn new(name: &'static str, metric: f64, threshold: f64) -> Self {
        Self {
            name,
            metric,
            threshold,
            pass: metric <= threshold,
        }
    }
}

/// Runs the oracle suite against the configured scenario.
pub fn verify_checks(cfg: &RunConfig) -> Result<Vec<Check>, CliError> {
    let gamma = cfg.gamma.single()?;
    let sc = cfg.scenario(gamma)?;
    let fd = FdConfig::new(cfg.verify.fd_step)?;
    let mut bases = sc.bases.clone();
    if cfg.verify.inject == Some(Fault::NonOrthonormalBasis) {
        bases.e_tilde.scale_mut(1.5);
        let taps = sc.dims.taps();
        bases.e = block_diag(&CMat::identity(taps, taps), &bases.e_tilde);
    }
    let score_factor = match cfg.verify.inject {
        Some(Fault::ScorePrefactor) => gamma.sqrt(),
        _ => 1.0,
    };
    let theta = sc.theta();
    let mut checks = Vec::new();

    let block = sc.precoder.block(sc.dims.n);
    let mut basis_err = linalg::orthonormality_error(&bases.e_tilde)
        .max((&bases.constraint * &bases.e_tilde).norm());
    if bases.u_n.ncols() > 0 {
        basis_err = basis_err
            .max(linalg::orthonormality_error(&bases.u_n))
            .max(bases.u_n.ad_mul(&block).norm());
    }
    checks.push(Check::new("constraint_bases", basis_err, TOL_BASES));

    let residual = system::constraint_residual(&theta.h, &theta.x, &bases, &sc.pilots)?;
    checks.push(Check::new(
        "constraint_residual",
        residual.norm() / theta.x.norm().max(1.0),
        TOL_RESIDUAL,
    ));

    let th_x = theta.t_h() * &theta.x;
    let tx_h = theta.t_x() * &theta.h;
    checks.push(Check::new("toeplitz", linalg::rel_vec(&th_x, &tx_h), TOL_TOEPLITZ));

    let clean = theta.noiseless(gamma);
    let mut rng = RngSpec::new(cfg.seed, STREAM_VERIFY).rng();
    let mut fd_err: f64 = 0.0;
    for _ in 0..cfg.verify.fd_draws.max(1) {
        let y = &clean + draw_noise(clean.len(), &mut rng);
        let analytic = crb::score(&y, &theta, gamma)?.scale(score_factor);
        let numeric = oracle::fd_score(&y, &theta, gamma, &fd);
        fd_err = fd_err.max(linalg::rel_vec(&analytic, &numeric));
    }
    checks.push(Check::new("score_fd", fd_err, TOL_SCORE_FD));

    if cfg.trials < 100 {
        return Err(CliError::Config("verify needs at least 100 trials".into()));
    }
    let base_score = oracle::analytic_score(&theta, gamma);
    let moments = oracle::score_moments(
        &theta,
        gamma,
        cfg.trials,
        cfg.seed,
        NoiseModel::Gaussian,
        |y| base_score(y).scale(score_factor),
    );
    let j = crb::fim(&theta, gamma).j;
    let j_mc = linalg::hermitian_part(&moments.total.second_moment());
    checks.push(Check::new("fim_mc", linalg::rel_frobenius(&j_mc, &j), TOL_FIM_MC));
    let reg = oracle::regularity_from_moments(&moments);
    checks.push(Check::new("regularity", reg.mean_score_norm, reg.threshold));

    let forms = oracle::compare_forms(&theta, gamma, &bases)?;
    checks.push(Check::new("three_form", forms.max_form_deviation(), TOL_THREE_FORM));
    checks.push(Check::new("trace_identity", forms.trace_identity, TOL_TRACE_IDENTITY));
    Ok(checks)
}

pub fn cmd_verify(cfg: &RunConfig) -> Result<CommandOutput, CliError> {
    json_only(cfg, "verify")?;
    let checks = verify_checks(cfg)?;
    let pass = checks.iter().all(|c| c.pass);
    let mut map = header("verify", cfg)?;
    map.insert("checks".into(), json!(checks));
    map.insert("pass".into(), json!(pass));
    Ok(CommandOutput {
        text: render(map),
        exit_code: if pass { EXIT_OK } else { EXIT_VERIFY },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(extra: &str) -> RunConfig {
        let text = format!("seed = 5\ntrials = 2000\n{extra}");
        RunConfig::from_toml_str(&text).unwrap()
    }

    const SMALL: &str = "[dims]\nm = 4\nl = 1\nn = 2\n";

    #[test]
    fn compute_all_pilots_matches_closed_form() {
        let cfg = config(&format!("gamma = 3.0\n{SMALL}[pilots]\nkind = \"all\"\n"));
        let out = cmd_compute(&cfg).unwrap();
        assert_eq!(out.exit_code, EXIT_OK);
        let v: Value = serde_json::from_str(&out.text).unwrap();
        assert_eq!(v["schema_version"], json!(SCHEMA_VERSION));
        assert_eq!(v["config"]["seed"], json!(5));

        let sc = cfg.scenario(3.0).unwrap();
        let tx = sc.theta().t_x();
        let expected = linalg::checked_inverse(&tx.ad_mul(&tx)).unwrap().unscale(3.0);
        let tb = v["trace_bound"].as_f64().unwrap();
        assert!((tb - expected.trace().re).abs() <= 1e-10 * tb);
    }

    #[test]
    fn compute_halves_with_doubled_gamma() {
        let base = format!("{SMALL}[pilots]\nkind = \"first\"\ncount = 3\n");
        let a = cmd_compute(&config(&format!("gamma = 2.0\n{base}"))).unwrap();
        let b = cmd_compute(&config(&format!("gamma = 4.0\n{base}"))).unwrap();
        let va: Value = serde_json::from_str(&a.text).unwrap();
        let vb: Value = serde_json::from_str(&b.text).unwrap();
        let ta = va["trace_bound"].as_f64().unwrap();
        let tb = vb["trace_bound"].as_f64().unwrap();
        assert!((ta - 2.0 * tb).abs() <= 1e-12 * ta);
    }

    #[test]
    fn blind_scalar_channel_is_non_identifiable() {
        let cfg = config("gamma = 1.0\n[dims]\nm = 1\nl = 0\nn = 1\n");
        let err = cmd_compute(&cfg).unwrap_err();
        assert_eq!(err.exit_code(), EXIT_NON_IDENTIFIABLE);
        assert!(err.to_string().contains("T_x^H U~ U~^H T_x") || err.to_string().contains("singular"));
    }

    #[test]
    fn gamma_sweep_is_inverse_proportional() {
        let cfg = config(&format!(
            "gamma = {{ start = 1.0, stop = 100.0, points = 5 }}\n{SMALL}[pilots]\nkind = \"first\"\ncount = 2\n"
        ));
        let (_, rows) = sweep_rows(&cfg).unwrap();
        let gammas = cfg.gamma.points().unwrap();
        let ref_val = rows[0].report.as_ref().unwrap().trace_bound * gammas[0];
        for (row, g) in rows.iter().zip(&gammas) {
            let v = row.report.as_ref().unwrap().trace_bound * g;
            assert!((v - ref_val).abs() <= 1e-12 * ref_val);
        }
        let csv = cmd_sweep(&cfg).unwrap().text;
        let data: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(data[0], "sweep_variable,trace_bound,min_singular,max_singular,non_identifiable");
        assert_eq!(data.len(), 6);
    }

    #[test]
    fn pilot_sweep_is_monotone_and_flags_blind_points() {
        let cfg = config(&format!(
            "gamma = 5.0\n{SMALL}[sweep]\nvariable = \"pilots\"\nstart = 0\nstop = 8\n"
        ));
        let (_, rows) = sweep_rows(&cfg).unwrap();
        assert!(rows[0].report.is_none());
        let traces: Vec<f64> = rows.iter().filter_map(|r| r.report.as_ref().map(|r| r.trace_bound)).collect();
        assert!(!traces.is_empty());
        assert!(traces.windows(2).all(|w| w[1] <= w[0] + 1e-10 * w[0]));
        let csv = cmd_sweep(&cfg).unwrap().text;
        assert!(csv.lines().any(|l| l == "0,,,,true"));
    }

    #[test]
    fn precoder_sweep_rows() {
        let cfg = config(&format!(
            "gamma = 5.0\n{SMALL}[pilots]\nkind = \"first\"\ncount = 2\n[sweep]\nvariable = \"precoder\"\nkinds = [\"cp_ofdm\", \"zero_padding\"]\n"
        ));
        let (_, rows) = sweep_rows(&cfg).unwrap();
        assert_eq!(rows[0].value, "cp_ofdm");
        assert_eq!(rows[1].value, "zero_padding");
        assert!(rows.iter().all(|r| r.report.is_some()));
    }

    #[test]
    fn verify_passes_and_detects_faults() {
        let base = format!("gamma = 4.0\n{SMALL}[pilots]\nkind = \"first\"\ncount = 2\n");
        let ok = verify_checks(&config(&base)).unwrap();
        assert!(ok.iter().all(|c| c.pass), "{ok:?}");

        let bad = verify_checks(&config(&format!("{base}[verify]\ninject = \"score_prefactor\"\n"))).unwrap();
        let find = |checks: &[Check], name: &str| checks.iter().find(|c| c.name == name).unwrap().pass;
        assert!(!find(&bad, "score_fd"));
        assert!(find(&bad, "three_form"));

        let skew = verify_checks(&config(&format!("{base}[verify]\ninject = \"non_orthonormal_basis\"\n"))).unwrap();
        assert!(!find(&skew, "constraint_bases"));
        assert!(find(&skew, "three_form"));
        assert!(find(&skew, "score_fd"));
    }

    #[test]
    fn simulate_flags_short_runs() {
        let mut cfg = config("gamma = 10.0\n[dims]\nm = 4\nl = 2\nn = 2\n[pilots]\nkind = \"all\"\n");
        cfg.trials = 10;
        let out = cmd_simulate(&cfg).unwrap();
        let v: Value = serde_json::from_str(&out.text).unwrap();
        let rel = v["report"]["trace_std_error"].as_f64().unwrap() / v["report"]["crb_trace"].as_f64().unwrap();
        assert!(rel > 0.2, "relative MC error {rel}");
        assert_eq!(v["flags"], json!(["insufficient trials"]));
    }

    #[test]
    fn overrides_take_precedence() {
        let mut cfg = config(&format!("gamma = 1.0\n{SMALL}"));
        Overrides {
            trials: Some(42),
            seed: Some(9),
            format: Some(OutputFormat::Csv),
        }
        .apply(&mut cfg);
        assert_eq!((cfg.trials, cfg.seed), (42, 9));
        assert!(cmd_verify(&cfg).is_err());
    }
}
