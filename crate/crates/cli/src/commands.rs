use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use hallucinate::constructor::{construct_hallucinated, ConstructionInput};
use hallucinate::detector::{classify, Classification, ClassifyOptions, StationaryReport};
use hallucinate::export::{fmt_f64, write_atomic};
use hallucinate::field::{linspace, sam_minimizers, sample_field, write_minimizers_csv};
use hallucinate::landscape::{synthetic2d_curve_nearest, synthetic2d_curve_point};
use hallucinate::manifold::continue_manifold;
use hallucinate::mlp::{accuracy, init_params, plane_slice};
use hallucinate::sam::{self, run_with_momentum, TerminalSidecar};
use hallucinate::{Error as CoreError, Mode, Objective, SamConfig, TerminalStatus, Trajectory, Vector};

use crate::config::{section, CurveSpec, ExperimentConfig, ObjectiveKind, PointSource};
use crate::error::CliError;

/// Output directory; every file is written atomically.
pub struct Output {
    dir: PathBuf,
}

impl Output {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        if !dir.is_dir() {
            return Err(CliError::Config(format!("{} is not a directory", dir.display())));
        }
        Ok(Self { dir: dir.to_path_buf() })
    }

    pub fn write<F>(&self, name: &str, fill: F) -> Result<(), CliError>
    where
        F: FnOnce(&mut dyn Write) -> std::io::Result<()>,
    {
        let path = self.dir.join(name);
        write_atomic(&path, fill).map_err(|e| CliError::io(&path, e))
    }

    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        self.write(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            writeln!(w)
        })
    }
}

fn vector(xs: &[f64]) -> Vector {
    Vector::from_column_slice(xs)
}

/// The radius a mode actually perturbs with; plain descent has none.
fn effective_rho(cfg: &SamConfig) -> f64 {
    match cfg.mode {
        Mode::Gd => 0.0,
        Mode::Sam | Mode::Switch => cfg.rho,
    }
}

fn starting_point(cfg: &ExperimentConfig, kind: &ObjectiveKind) -> Result<Vector, CliError> {
    match (&cfg.x0, kind) {
        (Some(x0), _) => Ok(vector(x0)),
        (None, ObjectiveKind::Mlp { spec, .. }) => Ok(init_params(spec)),
        (None, ObjectiveKind::Builtin(_)) => Err(CliError::Config("`x0` is required".into())),
    }
}

fn write_trajectory(
    out: &Output,
    obj: &Objective,
    traj: &Trajectory,
    rho: f64,
    opts: &ClassifyOptions,
) -> Result<StationaryReport, CliError> {
    let report = classify(obj, &traj.terminal_point, rho, opts)?;
    out.write("trajectory.csv", |w| traj.write_csv(w))?;
    out.json("terminal.json", &traj.sidecar())?;
    out.json("report.json", &report)?;
    Ok(report)
}

pub fn run(cfg: &ExperimentConfig, out: &Output) -> Result<(), CliError> {
    let kind = cfg.build_objective()?;
    let obj = kind.objective();
    let sam_cfg = cfg.sam()?;
    let x0 = starting_point(cfg, &kind)?;
    let traj = run_with_momentum(obj, sam_cfg, &x0, cfg.record_every, cfg.momentum)?;
    write_trajectory(out, obj, &traj, effective_rho(sam_cfg), &cfg.classify_options())?;
    Ok(())
}

#[derive(Serialize)]
struct TrainMetrics {
    rho: f64,
    init_norm: f64,
    final_loss: f64,
    accuracy: f64,
    raw_grad_norm: f64,
    shifted_grad_norm: f64,
    classification: Classification,
    terminal_status: TerminalStatus,
}

pub fn train_mlp(cfg: &ExperimentConfig, out: &Output) -> Result<(), CliError> {
    let kind = cfg.build_objective()?;
    let ObjectiveKind::Mlp { objective, spec, data } = &kind else {
        return Err(CliError::Config("train-mlp needs an `mlp` objective".into()));
    };
    let mut sam_cfg = cfg.sam()?.clone();
    let x0 = starting_point(cfg, &kind)?;
    if let Some(scale) = cfg.train.as_ref().and_then(|t| t.rho_scale) {
        sam_cfg.rho = scale * x0.norm();
        sam_cfg.validate()?;
    }
    let traj = run_with_momentum(objective, &sam_cfg, &x0, cfg.record_every, cfg.momentum)?;
    let report = write_trajectory(out, objective, &traj, effective_rho(&sam_cfg), &cfg.classify_options())?;
    out.json(
        "metrics.json",
        &TrainMetrics {
            rho: sam_cfg.rho,
            init_norm: x0.norm(),
            final_loss: objective.f(&traj.terminal_point),
            accuracy: accuracy(spec, &traj.terminal_point, data)?,
            raw_grad_norm: report.raw_grad_norm,
            shifted_grad_norm: report.shifted_grad_norm,
            classification: report.classification,
            terminal_status: traj.terminal_status,
        },
    )
}

pub fn field(cfg: &ExperimentConfig, out: &Output) -> Result<(), CliError> {
    let kind = cfg.build_objective()?;
    let obj = kind.objective();
    let s = section(&cfg.field, "field")?;
    let grid = sample_field(obj, s.bounds, s.points[0], s.points[1], s.rho)?;
    let mins = sam_minimizers(obj, &grid, &s.minimizers)?;
    out.write("grid_f.csv", |w| grid.write_f_csv(w))?;
    out.write("grid_fsam.csv", |w| grid.write_fsam_csv(w))?;
    out.write("field.csv", |w| grid.write_field_csv(w))?;
    out.write("sam_minimizers.csv", |w| write_minimizers_csv(w, &mins))
}

struct SweepRow {
    rho: f64,
    seed: u64,
    mode: Mode,
    final_loss: f64,
    raw_grad_norm: f64,
    shifted_grad_norm: f64,
    classification: String,
    terminal_status: String,
    steps: usize,
}

fn snake<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|j| j.as_str().map(str::to_string))
        .unwrap_or_default()
}

fn sweep_job(
    obj: &Objective,
    kind: &ObjectiveKind,
    base: &SamConfig,
    cfg: &ExperimentConfig,
    x0_box: Option<&[(f64, f64)]>,
    (rho, seed, mode): (f64, u64, Mode),
) -> Result<SweepRow, CliError> {
    let sam_cfg = SamConfig {
        rho,
        mode,
        seed,
        ..base.clone()
    };
    sam_cfg.validate()?;
    let x0 = match (kind, x0_box) {
        (ObjectiveKind::Mlp { spec, .. }, _) => init_params(&hallucinate::mlp::MlpSpec { seed, ..*spec }),
        (_, Some(b)) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Vector::from_iterator(b.len(), b.iter().map(|&(lo, hi)| rng.random_range(lo..hi)))
        }
        (_, None) => starting_point(cfg, kind)?,
    };
    let row = |loss, raw, shifted, class: String, status: String, steps| SweepRow {
        rho,
        seed,
        mode,
        final_loss: loss,
        raw_grad_norm: raw,
        shifted_grad_norm: shifted,
        classification: class,
        terminal_status: status,
        steps,
    };
    match run_with_momentum(obj, &sam_cfg, &x0, sam_cfg.max_iters, cfg.momentum) {
        Ok(t) => {
            let r = classify(obj, &t.terminal_point, effective_rho(&sam_cfg), &cfg.classify_options())?;
            Ok(row(
                obj.f(&t.terminal_point),
                r.raw_grad_norm,
                r.shifted_grad_norm,
                snake(&r.classification),
                snake(&t.terminal_status),
                t.last_record().k,
            ))
        }
        Err(CoreError::Diverged { step, .. }) => Ok(row(
            f64::NAN,
            f64::NAN,
            f64::NAN,
            "diverged".into(),
            "diverged".into(),
            step,
        )),
        Err(e) => Err(e.into()),
    }
}

fn mean_std(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() == 1 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn sweep(cfg: &ExperimentConfig, out: &Output) -> Result<(), CliError> {
    let kind = cfg.build_objective()?;
    let obj = kind.objective();
    let s = section(&cfg.sweep, "sweep")?;
    if s.rho_list.is_empty() || s.seed_list.is_empty() || s.modes.is_empty() {
        return Err(CliError::Config("rho_list, seed_list and modes must be non-empty".into()));
    }
    let base = cfg.sam()?;
    let jobs: Vec<(f64, u64, Mode)> = s
        .rho_list
        .iter()
        .flat_map(|&rho| {
            s.seed_list
                .iter()
                .flat_map(move |&seed| s.modes.iter().map(move |&mode| (rho, seed, mode)))
        })
        .collect();
    let rows = jobs
        .into_par_iter()
        .map(|job| sweep_job(obj, &kind, base, cfg, s.x0_box.as_deref(), job))
        .collect::<Result<Vec<_>, _>>()?;

    out.write("sweep.csv", |w| {
        writeln!(
            w,
            "rho,seed,mode,final_loss,raw_grad_norm,shifted_grad_norm,classification,terminal_status,steps"
        )?;
        for r in &rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                fmt_f64(r.rho),
                r.seed,
                snake(&r.mode),
                fmt_f64(r.final_loss),
                fmt_f64(r.raw_grad_norm),
                fmt_f64(r.shifted_grad_norm),
                r.classification,
                r.terminal_status,
                r.steps
            )?;
        }
        Ok(())
    })?;
    out.write("summary.csv", |w| {
        writeln!(
            w,
            "rho,mode,runs,loss_mean,loss_std,raw_grad_norm_mean,raw_grad_norm_std,shifted_grad_norm_mean,shifted_grad_norm_std,hallucinated"
        )?;
        for &rho in &s.rho_list {
            for &mode in &s.modes {
                let group: Vec<&SweepRow> = rows.iter().filter(|r| r.rho == rho && r.mode == mode).collect();
                let (lm, ls) = mean_std(group.iter().map(|r| r.final_loss));
                let (rm, rs) = mean_std(group.iter().map(|r| r.raw_grad_norm));
                let (sm, ss) = mean_std(group.iter().map(|r| r.shifted_grad_norm));
                let hallucinated = group
                    .iter()
                    .filter(|r| r.classification.starts_with("hallucinated"))
                    .count();
                let cols = [lm, ls, rm, rs, sm, ss].map(fmt_f64).join(",");
                writeln!(w, "{},{},{},{cols},{hallucinated}", fmt_f64(rho), snake(&mode), group.len())?;
            }
        }
        Ok(())
    })
}

pub fn construct(cfg: &ExperimentConfig, out: &Output) -> Result<(), CliError> {
    let kind = cfg.build_objective()?;
    let s = section(&cfg.construct, "construct")?;
    let input = ConstructionInput {
        x_star: vector(&s.x_star),
        x_bullet: s.x_bullet.as_deref().map(vector),
        epsilon: s.epsilon,
        bounds: s.bounds.clone(),
        resolution: s.resolution.clone(),
        refine: s.refine,
    };
    let (report, mask) = construct_hallucinated(kind.objective(), &input)?;
    out.json("construction.json", &report)?;
    out.write("component_mask.csv", |w| mask.write_csv(w))
}

/// Piecewise-linear interpolation through `points` at parameter `t` in
/// `[0, points.len() - 1]`.
fn polyline(points: &[Vector], t: f64) -> Vector {
    let last = points.len() - 1;
    let t = t.clamp(0.0, last as f64);
    let i = (t.floor() as usize).min(last.saturating_sub(1));
    if last == 0 {
        return points[0].clone();
    }
    let w = t - i as f64;
    &points[i] * (1.0 - w) + &points[i + 1] * w
}

pub fn continuation(cfg: &ExperimentConfig, out: &Output) -> Result<(), CliError> {
    let kind = cfg.build_objective()?;
    let obj = kind.objective();
    let s = section(&cfg.continuation, "continue")?;
    let x_h = vector(&s.x_h);
    let result = match &s.curve {
        CurveSpec::Synthetic2d {
            t_start,
            t_end,
            samples,
        } => {
            let t0 = match t_start {
                Some(t) => *t,
                None => synthetic2d_curve_nearest(&sam::perturbed_point(obj, &x_h, s.rho)?).0,
            };
            let ts = linspace(t0, *t_end, *samples);
            continue_manifold(obj, &x_h, s.rho, synthetic2d_curve_point, &ts, &s.options())?
        }
        CurveSpec::Points(points) => {
            if points.is_empty() {
                return Err(CliError::Config("curve needs at least one point".into()));
            }
            let points: Vec<Vector> = points.iter().map(|p| vector(p)).collect();
            let ts: Vec<f64> = (0..points.len()).map(|i| i as f64).collect();
            continue_manifold(obj, &x_h, s.rho, |t| polyline(&points, t), &ts, &s.options())?
        }
    };
    out.write("manifold.csv", |w| result.write_csv(w))?;
    out.json("manifold.json", &result)
}

#[derive(Serialize)]
struct SliceMeta {
    center: Vec<f64>,
    dir_u: Vec<f64>,
    dir_v: Vec<f64>,
    rho: f64,
}

fn random_direction(dim: usize, scale: f64, rng: &mut ChaCha8Rng) -> Vector {
    let d = Vector::from_iterator(dim, (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)));
    d.normalize() * scale
}

pub fn slice(cfg: &ExperimentConfig, out: &Output) -> Result<(), CliError> {
    let kind = cfg.build_objective()?;
    let obj = kind.objective();
    let s = section(&cfg.slice, "slice")?;
    let center = match (&s.center, &kind) {
        (Some(PointSource::Point(p)), _) => vector(p),
        (Some(PointSource::File(path)), _) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            let side: TerminalSidecar =
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            vector(&side.terminal_point)
        }
        (None, ObjectiveKind::Mlp { spec, .. }) => init_params(spec),
        (None, ObjectiveKind::Builtin(_)) => return Err(CliError::Config("slice needs a `center`".into())),
    };
    // random directions are scaled to the center's norm
    let scale = if center.norm() > 0.0 { center.norm() } else { 1.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(s.direction_seed);
    let dir_u = match &s.dir_u {
        Some(d) => vector(d),
        None => random_direction(center.len(), scale, &mut rng),
    };
    let dir_v = match &s.dir_v {
        Some(d) => vector(d),
        None => random_direction(center.len(), scale, &mut rng),
    };
    let surface = plane_slice(obj, &center, &dir_u, &dir_v, &s.alphas.values(), &s.betas.values(), s.rho)?;
    out.write("surface.csv", |w| surface.write_csv(w))?;
    out.json(
        "slice.json",
        &SliceMeta {
            center: center.iter().copied().collect(),
            dir_u: dir_u.iter().copied().collect(),
            dir_v: dir_v.iter().copied().collect(),
            rho: s.rho,
        },
    )
}
