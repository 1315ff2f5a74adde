//! End-to-end scenario execution: synthetic measurements in, tracked
//! estimates and error statistics out.
//!
//! Each Monte-Carlo run walks the waypoint list once. Per step it
//! synthesizes a measurement snapshot at the true position, estimates the
//! position from the map (when at least two components agree), converts the
//! resolved components into virtual anchors, and folds them into the filter;
//! steps with a single usable component fall back to resolving each
//! component against the filter's prediction, and empty snapshots coast on
//! the prediction alone.

use std::fmt;
use std::io::Write;
use std::path::Path;

use nalgebra::{DVector, Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::anchors::{compute_virtual_anchor, propagate_bearing, VirtualAnchor};
use crate::ekf::{
    measurement_variances, predict, step_outage, ControlOverride, EkfState, MotionModel,
};
use crate::geom::{Point2, UnitVec2};
use crate::map::MapModel;
use crate::mapat::{backtrace_candidates, estimate_position, CandidateLocation};
use crate::raytrace::{synthesize_measurements, trace_paths, NoiseSpec, PropagationPath};
use crate::scenario::ScenarioConfig;
use crate::{Error, Result, SPEED_OF_LIGHT};

/// How a step's estimate was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepMode {
    /// Multi-component agreement fixed the position and fed the filter.
    MapAtFix,
    /// No agreed fix; components were resolved individually against the
    /// filter's prediction.
    SingleMpcUpdate,
    /// Nothing usable was measured; the prediction was carried through.
    Outage,
}

impl fmt::Display for StepMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            StepMode::MapAtFix => "MapAtFix",
            StepMode::SingleMpcUpdate => "SingleMpcUpdate",
            StepMode::Outage => "Outage",
        };
        f.write_str(s)
    }
}

/// Everything recorded about one tracked step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub truth: Point2,
    pub estimate: Point2,
    pub error_m: f64,
    pub mpc_count: usize,
    pub mode: StepMode,
    /// Posterior mean [x, v_x, y, v_y].
    pub state: [f64; 4],
    /// Posterior covariance, row-major.
    pub covariance: [[f64; 4]; 4],
    /// Whether a direct path existed at this waypoint.
    pub los: bool,
    /// Map-only fix error when a multi-component fix was obtained.
    pub fix_error_m: Option<f64>,
    /// Normalized innovation squared of the update, when one ran.
    pub nis: Option<f64>,
    /// Stacked measurement rows behind `nis`.
    pub nis_dof: Option<usize>,
}

/// Pooled error statistics over all runs of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub runs: usize,
    pub steps_per_run: usize,
    pub mean_error_m: f64,
    pub median_error_m: f64,
    pub max_error_m: f64,
    /// Mean over steps whose waypoint has a direct path, if any.
    pub los_mean_error_m: Option<f64>,
    /// Mean over steps without a direct path, if any.
    pub nlos_mean_error_m: Option<f64>,
    pub outage_step_count: usize,
    /// Mean map-only error over steps with a multi-component fix.
    pub mapat_only_mean_m: Option<f64>,
    /// Mean filtered error over those same steps.
    pub ekf_mean_on_fix_steps_m: Option<f64>,
    /// Pooled error distribution, non-decreasing in both columns.
    pub cdf: Vec<(f64, f64)>,
}

/// Full result of a scenario: every run's step records plus the pooled
/// summary.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioOutcome {
    pub runs: Vec<Vec<StepRecord>>,
    pub summary: RunSummary,
}

/// Map-only versus filtered accuracy on the steps where the map-only
/// estimator produced a fix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineComparison {
    /// Steps (pooled over runs) with a multi-component fix.
    pub fix_steps: usize,
    pub mapat_only_mean_m: f64,
    pub ekf_mean_m: f64,
}

/// Per-waypoint geometry shared by every run: traced paths and whether a
/// direct path exists.
struct WaypointGeometry {
    paths: Vec<PropagationPath>,
    los: bool,
}

/// splitmix64 finalizer; decorrelates nearby seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Independent noise stream seed for one step of one run.
fn step_seed(run_seed: u64, step: usize) -> u64 {
    mix(run_seed
        .wrapping_mul(0x9e3779b97f4a7c15)
        .wrapping_add(step as u64))
}

/// Runs every Monte-Carlo repetition of the scenario.
///
/// Geometry (traced paths per waypoint) is computed once and shared; only
/// the measurement noise differs between runs, via seed + run index.
pub fn run_scenario(config: &ScenarioConfig) -> Result<ScenarioOutcome> {
    config.validate()?;
    let map = MapModel::load_json(&config.map_path)?;
    run_scenario_with_map(config, &map)
}

/// [`run_scenario`] with the map already loaded (the map file is ignored).
pub fn run_scenario_with_map(config: &ScenarioConfig, map: &MapModel) -> Result<ScenarioOutcome> {
    config.validate()?;
    let geometry = trace_waypoints(config, map)?;
    let mut runs = Vec::with_capacity(config.monte_carlo_runs);
    for run_index in 0..config.monte_carlo_runs {
        runs.push(run_single(config, map, &geometry, run_index)?);
    }
    let summary = summarize(config, &runs);
    Ok(ScenarioOutcome { runs, summary })
}

fn trace_waypoints(config: &ScenarioConfig, map: &MapModel) -> Result<Vec<WaypointGeometry>> {
    config
        .waypoints
        .iter()
        .map(|&w| {
            let paths = trace_paths(map, config.bs, w, &config.trace)?;
            let los = paths.iter().any(|p| p.is_los());
            Ok(WaypointGeometry { paths, los })
        })
        .collect()
}

/// One anchor's worth of stacked measurement data.
struct ResolvedComponent {
    anchor: VirtualAnchor,
    /// Measured range and bearing-cosine.
    z: (f64, f64),
    /// Their modeled variances.
    var: (f64, f64),
}

/// Builds the anchor + measurement row for one back-traced branch of one
/// measured component.
fn resolve_component(
    config: &ScenarioConfig,
    map: &MapModel,
    bs: Point2,
    branch: &CandidateLocation,
    aoa: f64,
    tof: f64,
) -> Result<ResolvedComponent> {
    let anchor = compute_virtual_anchor(map, bs, &branch.interactions, branch.source_mpc);
    let walls: Vec<_> = branch
        .interactions
        .iter()
        .filter(|i| i.kind == crate::raytrace::InteractionKind::Reflection)
        .map(|i| i.wall)
        .collect();
    let dir = propagate_bearing(map, aoa, &walls)?;
    let (range_var, cos_var) =
        measurement_variances(config.noise.sigma_tof, config.noise.sigma_aoa, dir.y());
    Ok(ResolvedComponent {
        anchor,
        z: (SPEED_OF_LIGHT * tof, dir.x()),
        var: (range_var, cos_var),
    })
}

/// 99.9th-percentile chi-square quantile (Wilson–Hilferty approximation),
/// used to reject updates whose innovation is inconsistent with the model.
/// A mis-resolved propagation path produces innovations hundreds of sigma
/// out; folding one in would drag the state far off track, so such steps
/// coast instead.
fn nis_gate(dof: usize) -> f64 {
    let k = dof as f64;
    let z = 3.0902;
    let c = 1.0 - 2.0 / (9.0 * k) + z * (2.0 / (9.0 * k)).sqrt();
    k * c * c * c
}

/// Applies a stacked update; `Ok(None)` when the update is numerically
/// unusable or fails the innovation gate, and the step should coast.
fn try_update(
    predicted: &EkfState,
    components: &[ResolvedComponent],
) -> Result<Option<(EkfState, f64, usize)>> {
    let anchors: Vec<VirtualAnchor> = components.iter().map(|c| c.anchor).collect();
    let mut z = DVector::zeros(2 * components.len());
    let mut r = DVector::zeros(2 * components.len());
    for (i, c) in components.iter().enumerate() {
        z[2 * i] = c.z.0;
        z[2 * i + 1] = c.z.1;
        r[2 * i] = c.var.0;
        r[2 * i + 1] = c.var.1;
    }
    match crate::ekf::update(predicted, &anchors, &z, &r) {
        Ok((_, innov)) if innov.nis > nis_gate(innov.dof) => Ok(None),
        Ok((state, innov)) => Ok(Some((state, innov.nis, innov.dof))),
        Err(Error::IllConditioned { .. }) | Err(Error::AnchorSingularity { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

fn run_single(
    config: &ScenarioConfig,
    map: &MapModel,
    geometry: &[WaypointGeometry],
    run_index: usize,
) -> Result<Vec<StepRecord>> {
    let run_seed = config.seed.wrapping_add(run_index as u64);
    let n = config.waypoints.len();

    let mut motion = MotionModel::new(config.sample_period, config.sigma_a)?;
    for k in config.turn_steps() {
        // At the first step past a corner the state is known: the walker is
        // at waypoint k moving along the new segment.
        let w = config.waypoints[k];
        let v = (w - config.waypoints[k - 1]) * (1.0 / config.sample_period);
        motion = motion.with_control(k, ControlOverride::inject(Vector4::new(w.x, v.x, w.y, v.y)));
    }

    let mut records = Vec::with_capacity(n);
    let mut state: Option<EkfState> = None;

    for (k, geo) in geometry.iter().enumerate() {
        let truth = config.waypoints[k];
        let min_gain = geo
            .paths
            .first()
            .map(|p| p.path_gain_db - config.gain_window_db)
            .unwrap_or(f64::NEG_INFINITY);
        let noise = NoiseSpec {
            seed: step_seed(run_seed, k),
            ..config.noise
        };
        let mpcs = synthesize_measurements(&geo.paths, &noise, config.max_mpcs, min_gain)?;

        let mut fix_error = None;
        let mut nis = None;
        let mut nis_dof = None;

        let (new_state, estimate, mode) = if let Some(prev) = &state {
            let predicted = predict(prev, &motion, k)?;
            if mpcs.is_empty() {
                let coasted = step_outage(&predicted);
                (coasted.clone(), coasted.position(), StepMode::Outage)
            } else {
                let mut sets = Vec::with_capacity(mpcs.len());
                for mpc in &mpcs {
                    sets.push(backtrace_candidates(
                        map,
                        config.bs,
                        mpc,
                        &config.backtrace,
                    )?);
                }
                let fix = estimate_position(&sets, config.cluster_radius)?;
                let (members, mode) = match &fix {
                    Some(f) => {
                        fix_error = Some(f.position.distance(truth));
                        (f.per_mpc_paths.clone(), StepMode::MapAtFix)
                    }
                    None => {
                        // Resolve each component on its own: the branch
                        // nearest the predicted position.
                        let p = predicted.position();
                        let members = sets
                            .iter()
                            .filter_map(|set| {
                                set.iter()
                                    .min_by(|a, b| {
                                        a.position
                                            .distance(p)
                                            .partial_cmp(&b.position.distance(p))
                                            .expect("finite distances")
                                    })
                                    .cloned()
                            })
                            .collect::<Vec<_>>();
                        (members, StepMode::SingleMpcUpdate)
                    }
                };
                let mut components = Vec::with_capacity(members.len());
                for member in &members {
                    let mpc = &mpcs[member.source_mpc];
                    components.push(resolve_component(
                        config, map, config.bs, member, mpc.aoa, mpc.tof,
                    )?);
                }
                match try_update(&predicted, &components)? {
                    Some((updated, step_nis, dof)) => {
                        nis = Some(step_nis);
                        nis_dof = Some(dof);
                        (updated.clone(), updated.position(), mode)
                    }
                    None => {
                        let coasted = step_outage(&predicted);
                        (coasted.clone(), coasted.position(), StepMode::Outage)
                    }
                }
            }
        } else {
            // First step: initialize from the map estimate; the filter needs
            // a position before it can predict anything.
            if mpcs.is_empty() {
                return Err(Error::InvalidScenario(
                    "no measurable component at the first waypoint; cannot initialize".into(),
                ));
            }
            let mut sets = Vec::with_capacity(mpcs.len());
            for mpc in &mpcs {
                sets.push(backtrace_candidates(
                    map,
                    config.bs,
                    mpc,
                    &config.backtrace,
                )?);
            }
            let fix = estimate_position(&sets, config.cluster_radius)?;
            let (position, mode) = match &fix {
                Some(f) => {
                    fix_error = Some(f.position.distance(truth));
                    (f.position, StepMode::MapAtFix)
                }
                None => {
                    // Fall back to reading the strongest component as a
                    // straight-line arrival.
                    let m = &mpcs[0];
                    let dir = UnitVec2::from_angle(m.aoa)?;
                    (
                        config.bs + dir.as_vec() * (SPEED_OF_LIGHT * m.tof),
                        StepMode::SingleMpcUpdate,
                    )
                }
            };
            let v = config.velocity_at(0);
            let init = EkfState::new(
                Vector4::new(position.x, v.x, position.y, v.y),
                Matrix4::identity() * config.p1_scale,
            )?;
            (init.clone(), position, mode)
        };

        let mut covariance = [[0.0; 4]; 4];
        for (i, row) in covariance.iter_mut().enumerate() {
            for (j, entry) in row.iter_mut().enumerate() {
                *entry = new_state.p[(i, j)];
            }
        }
        records.push(StepRecord {
            step: k,
            truth,
            estimate,
            error_m: truth.distance(estimate),
            mpc_count: mpcs.len(),
            mode,
            state: [
                new_state.x[0],
                new_state.x[1],
                new_state.x[2],
                new_state.x[3],
            ],
            covariance,
            los: geo.los,
            fix_error_m: fix_error,
            nis,
            nis_dof,
        });
        state = Some(new_state);
    }
    Ok(records)
}

fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

fn summarize(config: &ScenarioConfig, runs: &[Vec<StepRecord>]) -> RunSummary {
    let all: Vec<&StepRecord> = runs.iter().flatten().collect();
    let errors: Vec<f64> = all.iter().map(|r| r.error_m).collect();
    let cdf = compute_cdf(&errors);
    let median = if cdf.is_empty() {
        0.0
    } else {
        let mut sorted = errors.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite errors"));
        let n = sorted.len();
        if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        }
    };
    let los: Vec<f64> = all.iter().filter(|r| r.los).map(|r| r.error_m).collect();
    let nlos: Vec<f64> = all.iter().filter(|r| !r.los).map(|r| r.error_m).collect();
    let fix_mapat: Vec<f64> = all.iter().filter_map(|r| r.fix_error_m).collect();
    let fix_ekf: Vec<f64> = all
        .iter()
        .filter(|r| r.fix_error_m.is_some())
        .map(|r| r.error_m)
        .collect();
    RunSummary {
        runs: runs.len(),
        steps_per_run: config.waypoints.len(),
        mean_error_m: mean(&errors).unwrap_or(0.0),
        median_error_m: median,
        max_error_m: errors.iter().cloned().fold(0.0, f64::max),
        los_mean_error_m: mean(&los),
        nlos_mean_error_m: mean(&nlos),
        outage_step_count: all.iter().filter(|r| r.mode == StepMode::Outage).count(),
        mapat_only_mean_m: mean(&fix_mapat),
        ekf_mean_on_fix_steps_m: mean(&fix_ekf),
        cdf,
    }
}

/// Map-only accuracy versus the filter, over the pooled steps where a
/// multi-component fix existed.
pub fn mapat_only_baseline(config: &ScenarioConfig) -> Result<BaselineComparison> {
    let outcome = run_scenario(config)?;
    baseline_from_outcome(&outcome)
}

/// Extracts the baseline comparison from an already computed outcome.
pub fn baseline_from_outcome(outcome: &ScenarioOutcome) -> Result<BaselineComparison> {
    let fixes: Vec<(f64, f64)> = outcome
        .runs
        .iter()
        .flatten()
        .filter_map(|r| r.fix_error_m.map(|f| (f, r.error_m)))
        .collect();
    if fixes.is_empty() {
        return Err(Error::InvalidScenario(
            "no step produced a multi-component fix; baseline undefined".into(),
        ));
    }
    let n = fixes.len() as f64;
    Ok(BaselineComparison {
        fix_steps: fixes.len(),
        mapat_only_mean_m: fixes.iter().map(|p| p.0).sum::<f64>() / n,
        ekf_mean_m: fixes.iter().map(|p| p.1).sum::<f64>() / n,
    })
}

/// Sorted (error, cumulative probability) pairs; probabilities step by 1/n
/// up to exactly 1.
pub fn compute_cdf(errors: &[f64]) -> Vec<(f64, f64)> {
    let mut sorted: Vec<f64> = errors.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite errors"));
    let n = sorted.len();
    sorted
        .into_iter()
        .enumerate()
        .map(|(i, e)| (e, (i + 1) as f64 / n as f64))
        .collect()
}

/// Writes `trajectory.csv` (first run), `summary.json`, and `cdf.csv` into
/// `out_dir`, creating it if needed. Output is byte-deterministic for a
/// given outcome.
pub fn emit_outputs(outcome: &ScenarioOutcome, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;

    let mut trajectory = Vec::new();
    writeln!(
        trajectory,
        "step,truth_x,truth_y,est_x,est_y,error_m,mode,mpc_count"
    )?;
    if let Some(first) = outcome.runs.first() {
        for r in first {
            writeln!(
                trajectory,
                "{},{:.6},{:.6},{:.6},{:.6},{:.6},{},{}",
                r.step,
                r.truth.x,
                r.truth.y,
                r.estimate.x,
                r.estimate.y,
                r.error_m,
                r.mode,
                r.mpc_count
            )?;
        }
    }
    std::fs::write(out_dir.join("trajectory.csv"), trajectory)?;

    let mut cdf = Vec::new();
    writeln!(cdf, "error_m,probability")?;
    for (e, p) in &outcome.summary.cdf {
        writeln!(cdf, "{e:.6},{p:.6}")?;
    }
    std::fs::write(out_dir.join("cdf.csv"), cdf)?;

    let json = serde_json::to_string_pretty(&outcome.summary)?;
    std::fs::write(out_dir.join("summary.json"), json)?;
    Ok(())
}
