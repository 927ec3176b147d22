//! Experiment configuration: one JSON document per experiment.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use serde_json::Value;

use hallucinate::detector::ClassifyOptions;
use hallucinate::field::MinimizerOptions;
use hallucinate::manifold::ContinuationOptions;
use hallucinate::mlp::{as_objective, make_dataset, DatasetKind, LabeledDataset, MlpSpec};
use hallucinate::{make_builtin, Mode, Objective, SamConfig};

use crate::error::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub objective: Value,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub sam: Option<SamConfig>,
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    #[serde(default = "one")]
    pub record_every: usize,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default)]
    pub classify: Option<ClassifyOptions>,
    #[serde(default)]
    pub field: Option<FieldSection>,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
    #[serde(default)]
    pub construct: Option<ConstructSection>,
    #[serde(default, rename = "continue")]
    pub continuation: Option<ContinueSection>,
    #[serde(default)]
    pub slice: Option<SliceSection>,
    #[serde(default)]
    pub train: Option<TrainSection>,
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSection {
    pub rho: f64,
    #[serde(rename = "box")]
    pub bounds: [(f64, f64); 2],
    pub points: [usize; 2],
    #[serde(default)]
    pub minimizers: MinimizerOptions,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub rho_list: Vec<f64>,
    pub seed_list: Vec<u64>,
    pub modes: Vec<Mode>,
    /// Box for seeded uniform starting points; MLP objectives draw
    /// initial weights from the seed instead.
    #[serde(default)]
    pub x0_box: Option<Vec<(f64, f64)>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstructSection {
    pub x_star: Vec<f64>,
    #[serde(default)]
    pub x_bullet: Option<Vec<f64>>,
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(rename = "box")]
    pub bounds: Vec<(f64, f64)>,
    pub resolution: Vec<f64>,
    #[serde(default = "yes")]
    pub refine: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContinueSection {
    pub x_h: Vec<f64>,
    pub rho: f64,
    pub curve: CurveSpec,
    #[serde(default)]
    pub max_step: Option<f64>,
    #[serde(default)]
    pub newton_tol: Option<f64>,
    #[serde(default)]
    pub max_newton: Option<usize>,
}

impl ContinueSection {
    pub fn options(&self) -> ContinuationOptions {
        let d = ContinuationOptions::default();
        ContinuationOptions {
            max_step: self.max_step.unwrap_or(d.max_step),
            newton_tol: self.newton_tol.unwrap_or(d.newton_tol),
            max_newton: self.max_newton.unwrap_or(d.max_newton),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum CurveSpec {
    /// The minimizer curve of `synthetic2d`, parameterized by `y`. Without
    /// `t_start` the walk starts at the curve point nearest to the shifted
    /// start.
    Synthetic2d {
        #[serde(default)]
        t_start: Option<f64>,
        t_end: f64,
        samples: usize,
    },
    /// A polyline through the given points, sampled at its vertices.
    Points(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SliceSection {
    /// A point, or the path of a `terminal.json` whose terminal point is used.
    #[serde(default)]
    pub center: Option<PointSource>,
    #[serde(default)]
    pub dir_u: Option<Vec<f64>>,
    #[serde(default)]
    pub dir_v: Option<Vec<f64>>,
    #[serde(default)]
    pub direction_seed: u64,
    pub alphas: Linspace,
    pub betas: Linspace,
    pub rho: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum PointSource {
    Point(Vec<f64>),
    File(PathBuf),
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Linspace {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Linspace {
    pub fn values(&self) -> Vec<f64> {
        hallucinate::field::linspace(self.lo, self.hi, self.n)
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    /// When set, `rho = rho_scale * |theta_0|` overrides `sam.rho`.
    #[serde(default)]
    pub rho_scale: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub n_per_class: usize,
    #[serde(default)]
    pub class_count: Option<usize>,
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct MlpObjectiveSpec {
    mlp: MlpSpec,
    dataset: DatasetSpec,
}

/// A resolved objective; MLP objectives keep their network and data.
pub enum ObjectiveKind {
    Builtin(Objective),
    Mlp {
        objective: Objective,
        spec: MlpSpec,
        data: LabeledDataset,
    },
}

impl ObjectiveKind {
    pub fn objective(&self) -> &Objective {
        match self {
            ObjectiveKind::Builtin(o) => o,
            ObjectiveKind::Mlp { objective, .. } => objective,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn build_objective(&self) -> Result<ObjectiveKind, CliError> {
        let Value::Object(map) = &self.objective else {
            return Err(CliError::Config("`objective` must be an object".into()));
        };
        if map.contains_key("mlp") {
            let spec: MlpObjectiveSpec =
                serde_json::from_value(self.objective.clone()).map_err(|e| CliError::Config(format!("objective: {e}")))?;
            let d = &spec.dataset;
            let classes = d.class_count.unwrap_or(spec.mlp.class_count);
            let data = make_dataset(d.kind, d.n_per_class, classes, d.noise, d.seed)?;
            let objective = as_objective(&spec.mlp, &data)?;
            return Ok(ObjectiveKind::Mlp {
                objective,
                spec: spec.mlp,
                data,
            });
        }
        let name = map
            .get("name")
            .and_then(Value::as_str)
            .ok_or_else(|| CliError::Config("objective needs a `name` or an `mlp` spec".into()))?;
        let mut params = map.clone();
        params.remove("name");
        Ok(ObjectiveKind::Builtin(make_builtin(name, &Value::Object(params))?))
    }

    pub fn sam(&self) -> Result<&SamConfig, CliError> {
        let cfg = self.sam.as_ref().ok_or_else(|| missing("sam"))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn classify_options(&self) -> ClassifyOptions {
        self.classify.unwrap_or_default()
    }
}

pub fn missing(section: &str) -> CliError {
    CliError::Config(format!("config is missing the `{section}` section"))
}

pub fn section<'a, T>(value: &'a Option<T>, name: &str) -> Result<&'a T, CliError> {
    value.as_ref().ok_or_else(|| missing(name))
}
