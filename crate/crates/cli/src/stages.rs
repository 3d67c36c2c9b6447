//! Pipeline stages behind the subcommands. Each stage persists its
//! artifacts in the run directory; dependent stages reuse what exists and
//! build what is missing, so `detect` on an empty directory runs the whole
//! chain while `report` insists on prior results.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use windconflict_core::apc::{basis_from_samples, fit_surrogate, Surrogate};
use windconflict_core::conflict::{
    classify_probability, conflict_probability, ensemble_baseline, envelope_series,
    envelope_verdict, joint_conditional, EnvelopeSeries, Verdict, HIGH_RISK_PROBABILITY,
};
use windconflict_core::ensemble::{
    generate_synthetic_ensemble, load_ensemble, pool_ensembles, save_ensemble, SyntheticSpec,
    WindEnsemble,
};
use windconflict_core::grid::WindGrid;
use windconflict_core::mukl::{MuklExpansion, Truncation};
use windconflict_core::numfmt::sig9;
use windconflict_core::propagation::{plan_pair_at_nodes, plan_pair_per_member};
use windconflict_core::trajectory::{Planner, RbfWindField, WindCorrectedPlanner};

use crate::config::{ScenarioConfig, METERS_PER_NM};
use crate::error::CliError;
use crate::manifest::{relative_to, RunManifest};

pub const ENSEMBLE_FILE: &str = "ensemble.csv";
pub const EXPANSION_FILE: &str = "expansion.bin";
pub const EXPLAINED_FILE: &str = "explained.csv";
pub const DETECT_FILE: &str = "detect.json";
pub const SUMMARY_FILE: &str = "report/summary.txt";

pub struct RunContext {
    pub config: ScenarioConfig,
    pub run_dir: PathBuf,
    pub manifest: RunManifest,
}

impl RunContext {
    pub fn new(config: ScenarioConfig, config_bytes: &[u8]) -> Result<Self, CliError> {
        let run_dir = config.scenario.output_dir.clone();
        std::fs::create_dir_all(&run_dir)
            .map_err(|e| CliError::data("creating output directory", e))?;
        let manifest = RunManifest::load_or_new(&run_dir, config_bytes);
        Ok(Self { config, run_dir, manifest })
    }

    fn planner(&self) -> WindCorrectedPlanner {
        WindCorrectedPlanner {
            dt: self.config.trajectory.time_step,
            max_flight_time: self.config.trajectory.max_flight_time,
            ..WindCorrectedPlanner::default()
        }
    }

    fn truncation(&self) -> Truncation {
        match (self.config.expansion.modes, self.config.expansion.explained_variance) {
            (Some(m), _) => Truncation::Modes(m),
            (None, Some(d)) => Truncation::EnergyFraction(d),
            (None, None) => unreachable!("validated config"),
        }
    }

    fn surrogate_file(&self, i: usize, j: usize) -> String {
        format!(
            "surrogate_{}_{}.bin",
            self.config.aircraft[i].id, self.config.aircraft[j].id
        )
    }

    fn record(&mut self, path: &std::path::Path) {
        let rel = relative_to(&self.run_dir, path);
        self.manifest.record_artifact(&rel);
    }
}

/// Builds the pooled ensemble and writes the canonical copy.
pub fn cmd_ingest(ctx: &mut RunContext) -> Result<WindEnsemble, CliError> {
    let start = Instant::now();
    let ensemble = if let Some(s) = &ctx.config.synthetic {
        let grid = WindGrid::regular(s.grid_lat0, s.grid_lon0, s.grid_step, s.grid_nlat, s.grid_nlon)?;
        let spec = SyntheticSpec {
            correlation_length_deg: s.correlation_length,
            cross_correlation: s.cross_correlation,
            sigma_u: s.sigma_u,
            sigma_v: s.sigma_v,
            mean_u: s.mean_u,
            mean_v: s.mean_v,
        };
        generate_synthetic_ensemble(&grid, s.members, ctx.config.scenario.seed, &spec)?
    } else {
        let mut sources = Vec::with_capacity(ctx.config.scenario.ensembles.len());
        for path in &ctx.config.scenario.ensembles {
            sources.push(load_ensemble(path)?);
        }
        pool_ensembles(sources)?
    };

    let path = ctx.run_dir.join(ENSEMBLE_FILE);
    save_ensemble(&ensemble, &path)?;
    ctx.record(&path);
    ctx.manifest.record_stage("ingest", start.elapsed().as_secs_f64());
    println!(
        "ingest: {} members on a {}x{} grid -> {}",
        ensemble.members().len(),
        ensemble.grid().shape().0,
        ensemble.grid().shape().1,
        path.display()
    );
    Ok(ensemble)
}

fn ensure_ensemble(ctx: &mut RunContext) -> Result<WindEnsemble, CliError> {
    let path = ctx.run_dir.join(ENSEMBLE_FILE);
    if path.exists() {
        Ok(load_ensemble(&path)?)
    } else {
        cmd_ingest(ctx)
    }
}

/// Fits the modal expansion, persists it and prints the explained-variance
/// table.
pub fn cmd_decompose(ctx: &mut RunContext) -> Result<MuklExpansion, CliError> {
    let ensemble = ensure_ensemble(ctx)?;
    let start = Instant::now();
    let expansion = MuklExpansion::fit(&ensemble, ctx.truncation())?;

    let path = ctx.run_dir.join(EXPANSION_FILE);
    expansion.save_archive(&path)?;
    ctx.record(&path);

    let total: f64 = expansion.eigenvalues().iter().sum();
    let mut csv = String::from("mode,eigenvalue,fraction,cumulative_fraction\n");
    let mut cumulative = 0.0;
    println!("mode   eigenvalue      explained  cumulative");
    for (k, lambda) in expansion.eigenvalues().iter().enumerate() {
        let fraction = lambda / total;
        cumulative += fraction;
        let marker = if k < expansion.order() { '*' } else { ' ' };
        if k < expansion.order() || k < 10 {
            println!(
                "{marker}{:>4}  {:>13.6e}  {:>8.4}%  {:>8.4}%",
                k + 1,
                lambda,
                100.0 * fraction,
                100.0 * cumulative
            );
        }
        let _ = writeln!(
            csv,
            "{},{},{},{}",
            k + 1,
            sig9(*lambda),
            sig9(fraction),
            sig9(cumulative)
        );
    }
    println!("retained {} of {} modes", expansion.order(), expansion.selectable_modes());
    let explained_path = ctx.run_dir.join(EXPLAINED_FILE);
    std::fs::write(&explained_path, csv).map_err(|e| CliError::data("writing explained table", e))?;
    ctx.record(&explained_path);

    ctx.manifest.record_stage("decompose", start.elapsed().as_secs_f64());
    Ok(expansion)
}

fn ensure_expansion(ctx: &mut RunContext) -> Result<MuklExpansion, CliError> {
    let path = ctx.run_dir.join(EXPANSION_FILE);
    if path.exists() {
        Ok(MuklExpansion::load_archive(&path)?)
    } else {
        cmd_decompose(ctx)
    }
}

pub struct PairSurrogate {
    pub i: usize,
    pub j: usize,
    pub outcome: Result<Surrogate, String>,
}

/// Plans every pair at the quadrature nodes and fits + persists the
/// per-pair surrogates. Also writes the mean-field trajectory of each
/// aircraft as plot data.
pub fn cmd_surrogate(ctx: &mut RunContext, dump: bool) -> Result<Vec<PairSurrogate>, CliError> {
    let ensemble = ensure_ensemble(ctx)?;
    let expansion = ensure_expansion(ctx)?;
    let start = Instant::now();

    let basis = basis_from_samples(expansion.xi_samples(), ctx.config.expansion.quadrature_order)?;
    let planner = ctx.planner();

    let traj_dir = ctx.run_dir.join("trajectories");
    std::fs::create_dir_all(&traj_dir).map_err(|e| CliError::data("creating trajectories dir", e))?;
    let mean_field = RbfWindField::from_ensemble_mean(&ensemble, None)?;
    let aircraft = ctx.config.aircraft.clone();
    for entry in &aircraft {
        let spec = entry.to_spec();
        let trajectory = planner.plan(&spec, &mean_field)?;
        let path = traj_dir.join(format!("{}_mean.csv", entry.id));
        std::fs::write(&path, trajectory.to_csv_string())
            .map_err(|e| CliError::data("writing trajectory", e))?;
        ctx.record(&path);
    }

    let pairs = ctx.config.pairs();
    let results: Vec<PairSurrogate> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let a = ctx.config.aircraft[i].to_spec();
            let b = ctx.config.aircraft[j].to_spec();
            let outcome = plan_pair_at_nodes(&expansion, basis.node_tuples(), &a, &b, &planner, None)
                .map_err(|e| e.to_string())
                .and_then(|plans| {
                    fit_surrogate(basis.clone(), plans.times, plans.separations)
                        .map_err(|e| e.to_string())
                });
            PairSurrogate { i, j, outcome }
        })
        .collect();

    for pair in &results {
        let name = ctx.surrogate_file(pair.i, pair.j);
        match &pair.outcome {
            Ok(surrogate) => {
                let path = ctx.run_dir.join(&name);
                surrogate.save_archive(&path)?;
                ctx.record(&path);
                if dump {
                    println!(
                        "surrogate {} - {}:",
                        ctx.config.aircraft[pair.i].id, ctx.config.aircraft[pair.j].id
                    );
                    print!("{}", surrogate.dump_coefficients());
                }
            }
            Err(msg) => {
                eprintln!(
                    "surrogate {} - {} failed: {msg}",
                    ctx.config.aircraft[pair.i].id, ctx.config.aircraft[pair.j].id
                );
            }
        }
    }

    ctx.manifest.record_stage("surrogate", start.elapsed().as_secs_f64());
    Ok(results)
}

fn ensure_surrogates(ctx: &mut RunContext) -> Result<Vec<PairSurrogate>, CliError> {
    let pairs = ctx.config.pairs();
    let all_present = pairs
        .iter()
        .all(|&(i, j)| ctx.run_dir.join(ctx.surrogate_file(i, j)).exists());
    if all_present {
        let mut out = Vec::with_capacity(pairs.len());
        for (i, j) in pairs {
            let path = ctx.run_dir.join(ctx.surrogate_file(i, j));
            let outcome = Surrogate::load_archive(&path).map_err(|e| e.to_string());
            out.push(PairSurrogate { i, j, outcome });
        }
        Ok(out)
    } else {
        cmd_surrogate(ctx, false)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeReport {
    pub time_requested: f64,
    pub time_used: f64,
    pub index: usize,
    pub probability: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionalReport {
    pub time_requested: f64,
    pub time_used: f64,
    pub bound_nm: f64,
    pub joint_below: f64,
    pub conditioning_below: f64,
    pub marginal_event: f64,
    pub conditional: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaselineReport {
    pub below: usize,
    pub total: usize,
    pub probability: f64,
    pub conditional: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairReport {
    pub a: String,
    pub b: String,
    pub status: String,
    pub verdict: Option<String>,
    pub t_min_mean: Option<f64>,
    pub min_mean_separation_m: Option<f64>,
    pub envelope_crossed: Option<bool>,
    pub first_crossing_time: Option<f64>,
    pub probability: Option<f64>,
    pub degenerate: Option<bool>,
    pub probes: Vec<ProbeReport>,
    pub conditional: Option<ConditionalReport>,
    pub baseline: Option<BaselineReport>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectReport {
    pub threshold_m: f64,
    pub time_step: f64,
    pub modes: usize,
    pub quadrature_order: usize,
    pub members: usize,
    pub explained_cumulative: f64,
    pub pairs: Vec<PairReport>,
}

fn failed_pair(a: &str, b: &str, msg: &str) -> PairReport {
    PairReport {
        a: a.to_string(),
        b: b.to_string(),
        status: format!("failed: {msg}"),
        verdict: None,
        t_min_mean: None,
        min_mean_separation_m: None,
        envelope_crossed: None,
        first_crossing_time: None,
        probability: None,
        degenerate: None,
        probes: Vec::new(),
        conditional: None,
        baseline: None,
    }
}

fn time_index(time: f64, dt: f64, len: usize) -> usize {
    ((time / dt).round() as usize).min(len.saturating_sub(1))
}

fn envelope_of(surrogate: &Surrogate, threshold: f64) -> Result<EnvelopeSeries, String> {
    envelope_series(
        surrogate.times(),
        surrogate.node_outputs(),
        surrogate.basis().tensor_weights(),
        threshold,
    )
    .map_err(|e| e.to_string())
}

fn analyze_pair(
    ctx: &RunContext,
    pair: &PairSurrogate,
    expansion: &MuklExpansion,
    ensemble: &WindEnsemble,
) -> PairReport {
    let a_id = &ctx.config.aircraft[pair.i].id;
    let b_id = &ctx.config.aircraft[pair.j].id;
    let surrogate = match &pair.outcome {
        Ok(s) => s,
        Err(msg) => return failed_pair(a_id, b_id, msg),
    };
    let threshold = ctx.config.threshold_m();

    let envelope = match envelope_of(surrogate, threshold) {
        Ok(e) => e,
        Err(msg) => return failed_pair(a_id, b_id, &msg),
    };
    let crossing = envelope_verdict(&envelope);
    let t_star = envelope.min_mean_index();
    let times = surrogate.times();
    let dt = ctx.config.trajectory.time_step;

    let mut report = PairReport {
        a: a_id.clone(),
        b: b_id.clone(),
        status: "ok".to_string(),
        verdict: None,
        t_min_mean: Some(times[t_star]),
        min_mean_separation_m: Some(envelope.mean()[t_star]),
        envelope_crossed: Some(crossing.crosses),
        first_crossing_time: crossing.first_crossing.map(|(_, t)| t),
        probability: None,
        degenerate: None,
        probes: Vec::new(),
        conditional: None,
        baseline: None,
    };

    let xi = expansion.xi_samples();
    if crossing.crosses {
        report.verdict = Some(Verdict::ConflictByEnvelope.as_str().to_string());
    } else {
        let marginal = match conflict_probability(surrogate, xi, t_star, threshold) {
            Ok(m) => m,
            Err(e) => return failed_pair(a_id, b_id, &e.to_string()),
        };
        report.verdict = Some(classify_probability(marginal.probability).as_str().to_string());
        report.probability = Some(marginal.probability);
        report.degenerate = Some(marginal.degenerate);

        for &probe in &ctx.config.scenario.probe_times {
            let index = time_index(probe, dt, times.len());
            match conflict_probability(surrogate, xi, index, threshold) {
                Ok(m) => report.probes.push(ProbeReport {
                    time_requested: probe,
                    time_used: times[index],
                    index,
                    probability: m.probability,
                }),
                Err(e) => return failed_pair(a_id, b_id, &e.to_string()),
            }
        }

        if let Some(c) = &ctx.config.conditioning {
            let t1 = time_index(c.time, dt, times.len());
            if t1 != t_star {
                match joint_conditional(surrogate, xi, t1, t_star, c.bound_nm * METERS_PER_NM, threshold)
                {
                    Ok(j) => {
                        report.conditional = Some(ConditionalReport {
                            time_requested: c.time,
                            time_used: times[t1],
                            bound_nm: c.bound_nm,
                            joint_below: j.joint_below,
                            conditioning_below: j.conditioning_below,
                            marginal_event: j.marginal_event,
                            conditional: j.conditional,
                        });
                    }
                    // An empty conditioning event leaves the conditional
                    // undefined without invalidating the marginal results.
                    Err(windconflict_core::error::ConflictError::VanishingConditioner {
                        ..
                    }) => {
                        eprintln!(
                            "pair {a_id} - {b_id}: conditioning event at t = {:.1} s has \
                             vanishing probability; conditional omitted",
                            times[t1]
                        );
                    }
                    Err(e) => return failed_pair(a_id, b_id, &e.to_string()),
                }
            }
        }
    }

    // Member-counting baseline on the raw ensemble, for comparison.
    let a_spec = ctx.config.aircraft[pair.i].to_spec();
    let b_spec = ctx.config.aircraft[pair.j].to_spec();
    let planner = ctx.planner();
    match plan_pair_per_member(ensemble, &a_spec, &b_spec, &planner, None) {
        Ok(plans) => {
            let member_t_star = t_star.min(plans.separations.ncols().saturating_sub(1));
            match ensemble_baseline(&plans.separations, threshold, member_t_star, None) {
                Ok(b) => {
                    report.baseline = Some(BaselineReport {
                        below: b.below,
                        total: b.total,
                        probability: b.probability,
                        conditional: None,
                    });
                }
                Err(e) => return failed_pair(a_id, b_id, &e.to_string()),
            }
            if let Some(c) = &ctx.config.conditioning {
                let t1 = time_index(c.time, dt, plans.separations.ncols());
                if t1 != member_t_star {
                    match ensemble_baseline(
                        &plans.separations,
                        threshold,
                        member_t_star,
                        Some((t1, c.bound_nm * METERS_PER_NM)),
                    ) {
                        Ok(b) => {
                            if let Some(baseline) = &mut report.baseline {
                                baseline.conditional = b.conditional;
                            }
                        }
                        // No member in the conditioning set: the counting
                        // conditional is undefined, the marginal stands.
                        Err(windconflict_core::error::ConflictError::EmptyConditioningSet) => {}
                        Err(e) => return failed_pair(a_id, b_id, &e.to_string()),
                    }
                }
            }
        }
        Err(e) => return failed_pair(a_id, b_id, &e.to_string()),
    }

    report
}

/// Runs the conflict analysis for every pair and writes `detect.json`.
pub fn cmd_detect(ctx: &mut RunContext) -> Result<DetectReport, CliError> {
    let ensemble = ensure_ensemble(ctx)?;
    let expansion = ensure_expansion(ctx)?;
    let surrogates = ensure_surrogates(ctx)?;
    let start = Instant::now();

    let pairs: Vec<PairReport> = surrogates
        .par_iter()
        .map(|pair| analyze_pair(ctx, pair, &expansion, &ensemble))
        .collect();

    let fractions = expansion.explained_fractions();
    let report = DetectReport {
        threshold_m: ctx.config.threshold_m(),
        time_step: ctx.config.trajectory.time_step,
        modes: expansion.order(),
        quadrature_order: ctx.config.expansion.quadrature_order,
        members: ensemble.members().len(),
        explained_cumulative: fractions.iter().take(expansion.order()).sum(),
        pairs,
    };

    let path = ctx.run_dir.join(DETECT_FILE);
    let mut text = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::data("serializing detection report", e))?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| CliError::data("writing detection report", e))?;
    ctx.record(&path);
    ctx.manifest.record_stage("detect", start.elapsed().as_secs_f64());

    for pair in &report.pairs {
        match (&pair.verdict, pair.probability) {
            (Some(v), Some(p)) => println!("pair {} - {}: {} (p = {:.6})", pair.a, pair.b, v, p),
            (Some(v), None) => println!("pair {} - {}: {}", pair.a, pair.b, v),
            _ => println!("pair {} - {}: {}", pair.a, pair.b, pair.status),
        }
    }
    Ok(report)
}

fn load_detect(ctx: &RunContext) -> Result<DetectReport, CliError> {
    let path = ctx.run_dir.join(DETECT_FILE);
    let text = std::fs::read_to_string(&path).map_err(|_| {
        CliError::Data(format!(
            "missing detect stage artifact {}; run `detect` first",
            path.display()
        ))
    })?;
    serde_json::from_str(&text).map_err(|e| CliError::data("parsing detection report", e))
}

fn write_pdf_csv(path: &std::path::Path, grid: &[(f64, f64)]) -> Result<(), CliError> {
    let mut out = String::from("separation_m,density\n");
    for (x, d) in grid {
        let _ = writeln!(out, "{},{}", sig9(*x), sig9(*d));
    }
    std::fs::write(path, out).map_err(|e| CliError::data("writing density grid", e))
}

/// Renders detection results into per-pair plot CSVs and a text summary.
pub fn cmd_report(ctx: &mut RunContext) -> Result<(), CliError> {
    let detect = load_detect(ctx)?;
    let expansion_path = ctx.run_dir.join(EXPANSION_FILE);
    if !expansion_path.exists() {
        return Err(CliError::Data(format!(
            "missing decompose stage artifact {}; run `decompose` first",
            expansion_path.display()
        )));
    }
    let expansion = MuklExpansion::load_archive(&expansion_path)?;
    let start = Instant::now();

    let report_dir = ctx.run_dir.join("report");
    std::fs::create_dir_all(&report_dir).map_err(|e| CliError::data("creating report dir", e))?;

    let mut summary = String::new();
    let _ = writeln!(summary, "conflict analysis summary");
    let _ = writeln!(
        summary,
        "members: {}  modes: {}  quadrature order: {}  explained: {:.4}%",
        detect.members,
        detect.modes,
        detect.quadrature_order,
        100.0 * detect.explained_cumulative
    );
    let _ = writeln!(
        summary,
        "separation threshold: {:.0} m ({:.1} NM)",
        detect.threshold_m,
        detect.threshold_m / METERS_PER_NM
    );
    let _ = writeln!(summary);

    let xi = expansion.xi_samples();
    for pair in &detect.pairs {
        let tag = format!("{}_{}", pair.a, pair.b);
        if pair.status != "ok" {
            let _ = writeln!(summary, "pair {} - {}: {}", pair.a, pair.b, pair.status);
            continue;
        }
        let surrogate_path = ctx
            .run_dir
            .join(format!("surrogate_{}_{}.bin", pair.a, pair.b));
        if !surrogate_path.exists() {
            return Err(CliError::Data(format!(
                "missing surrogate stage artifact {}; run `surrogate` first",
                surrogate_path.display()
            )));
        }
        let surrogate = Surrogate::load_archive(&surrogate_path)?;
        let envelope = envelope_of(&surrogate, detect.threshold_m)
            .map_err(CliError::Numerical)?;

        let envelope_path = report_dir.join(format!("envelope_{tag}.csv"));
        std::fs::write(&envelope_path, envelope.to_csv_string())
            .map_err(|e| CliError::data("writing envelope", e))?;
        ctx.record(&envelope_path);

        let verdict = pair.verdict.as_deref().unwrap_or("unknown");
        let mut line = format!("pair {} - {}: {}", pair.a, pair.b, verdict);
        if let (Some(t), Some(d)) = (pair.t_min_mean, pair.min_mean_separation_m) {
            let _ = write!(line, "; closest mean approach {d:.1} m at t = {t:.1} s");
        }
        if let Some(t) = pair.first_crossing_time {
            let _ = write!(line, "; envelope first crosses at t = {t:.1} s");
        }
        if let Some(p) = pair.probability {
            let _ = write!(line, "; p(conflict) = {p:.6}");
            if p > HIGH_RISK_PROBABILITY {
                let _ = write!(line, " HIGH RISK");
            }
        }
        let _ = writeln!(summary, "{line}");

        // Density plot data at the analysis instant and every probe.
        if pair.probability.is_some() && pair.degenerate != Some(true) {
            let dt = detect.time_step;
            let times = surrogate.times();
            let t_star = time_index(pair.t_min_mean.unwrap_or(0.0), dt, times.len());
            let mut instants = vec![(times[t_star], t_star)];
            for probe in &pair.probes {
                if !instants.iter().any(|(_, i)| *i == probe.index) {
                    instants.push((probe.time_used, probe.index));
                }
            }
            for (time, index) in instants {
                let marginal = conflict_probability(&surrogate, xi, index, detect.threshold_m)?;
                if let Some(kde) = marginal.kde {
                    let pdf_path = report_dir.join(format!("pdf_{tag}_t{time}.csv"));
                    write_pdf_csv(&pdf_path, &kde.pdf_grid(201))?;
                    ctx.record(&pdf_path);
                }
            }
            for probe in &pair.probes {
                let _ = writeln!(
                    summary,
                    "  probe t = {:.1} s (grid {:.1} s): p = {:.6}{}",
                    probe.time_requested,
                    probe.time_used,
                    probe.probability,
                    if probe.probability > HIGH_RISK_PROBABILITY { " HIGH RISK" } else { "" }
                );
            }
        }

        if let Some(c) = &pair.conditional {
            let t2 = time_index(pair.t_min_mean.unwrap_or(0.0), detect.time_step, surrogate.times().len());
            let t1 = time_index(c.time_used, detect.time_step, surrogate.times().len());
            let joint = joint_conditional(
                &surrogate,
                xi,
                t1,
                t2,
                c.bound_nm * METERS_PER_NM,
                detect.threshold_m,
            )?;
            let (gx, gy, grid) = joint.kde.pdf_grid(61);
            let mut out = String::from("separation_t1_m,separation_t2_m,density\n");
            for (ix, x) in gx.iter().enumerate() {
                for (iy, y) in gy.iter().enumerate() {
                    let _ = writeln!(
                        out,
                        "{},{},{}",
                        sig9(*x),
                        sig9(*y),
                        sig9(grid[(ix, iy)])
                    );
                }
            }
            let joint_path = report_dir.join(format!("joint_{tag}.csv"));
            std::fs::write(&joint_path, out).map_err(|e| CliError::data("writing joint grid", e))?;
            ctx.record(&joint_path);
            let _ = writeln!(
                summary,
                "  conditional on d(t = {:.1} s) < {:.1} NM: p = {:.6}{}",
                c.time_used,
                c.bound_nm,
                c.conditional,
                if c.conditional > HIGH_RISK_PROBABILITY { " HIGH RISK" } else { "" }
            );
        }

        if let Some(b) = &pair.baseline {
            let _ = writeln!(
                summary,
                "  ensemble baseline: {}/{} members = {:.5}{}",
                b.below,
                b.total,
                b.probability,
                match b.conditional {
                    Some(c) => format!("; conditional {c:.5}"),
                    None => String::new(),
                }
            );
        }
    }

    let summary_path = ctx.run_dir.join(SUMMARY_FILE);
    std::fs::write(&summary_path, &summary).map_err(|e| CliError::data("writing summary", e))?;
    ctx.record(&summary_path);
    ctx.manifest.record_stage("report", start.elapsed().as_secs_f64());
    print!("{summary}");
    Ok(())
}

/// Reruns the full pipeline once per retained-mode count and writes the
/// comparison table.
pub fn cmd_sweep(ctx: &mut RunContext, from: usize, to: usize) -> Result<(), CliError> {
    if from < 1 || from > to {
        return Err(CliError::Config(format!(
            "sweep-M: range must satisfy 1 <= a <= b, got {from}..{to}"
        )));
    }
    let start = Instant::now();
    let mut table = String::from("M,explained_cumulative,pair,verdict,probability,seconds\n");
    println!("   M  explained   pair            verdict                  probability   seconds");

    for m in from..=to {
        let mut sub_config = ctx.config.clone();
        sub_config.expansion.modes = Some(m);
        sub_config.expansion.explained_variance = None;
        sub_config.scenario.output_dir = ctx.run_dir.join(format!("M_{m}"));

        let sub_bytes = format!("{}:M={m}", ctx.manifest.config_sha256);
        let mut sub_ctx = RunContext::new(sub_config, sub_bytes.as_bytes())?;
        // Share the ingested ensemble across sweep points.
        let ensemble_path = ctx.run_dir.join(ENSEMBLE_FILE);
        if !ensemble_path.exists() {
            cmd_ingest(ctx)?;
        }
        std::fs::copy(&ensemble_path, sub_ctx.run_dir.join(ENSEMBLE_FILE))
            .map_err(|e| CliError::data("copying ensemble into sweep run", e))?;
        sub_ctx.manifest.record_artifact(ENSEMBLE_FILE);

        let sub_start = Instant::now();
        let detect = cmd_detect(&mut sub_ctx)?;
        cmd_report(&mut sub_ctx)?;
        sub_ctx.manifest.save(&sub_ctx.run_dir)?;
        let seconds = sub_start.elapsed().as_secs_f64();

        for pair in &detect.pairs {
            let verdict = pair.verdict.as_deref().unwrap_or(&pair.status);
            let probability = pair
                .probability
                .map(|p| format!("{p:.6}"))
                .unwrap_or_else(|| "-".to_string());
            let _ = writeln!(
                table,
                "{m},{},{}-{},{verdict},{probability},{seconds:.3}",
                sig9(detect.explained_cumulative),
                pair.a,
                pair.b
            );
            println!(
                "{m:>4}  {:>8.4}%  {:<14}  {verdict:<23}  {probability:>11}  {seconds:>8.3}",
                100.0 * detect.explained_cumulative,
                format!("{}-{}", pair.a, pair.b),
            );
        }
    }

    let table_path = ctx.run_dir.join("sweep.csv");
    std::fs::write(&table_path, table).map_err(|e| CliError::data("writing sweep table", e))?;
    ctx.record(&table_path);
    ctx.manifest.record_stage("sweep", start.elapsed().as_secs_f64());
    Ok(())
}
