use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use embdistill::pruning::PruneConfig;
use embdistill::reduction::IcaConfig;
use embdistill::retrieval::Metric;
use embdistill::trainer::{LossKind, TrainConfig};
use serde::{Deserialize, Serialize};

/// How an experiment produces its compact embeddings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Pca,
    Ica,
    Grp,
    Prune,
    DistanceMatch,
    ClusterMatch,
    Reconfigure,
    /// A head trained from scratch on random features.
    Baseline,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Self::Pca,
        Self::Ica,
        Self::Grp,
        Self::Prune,
        Self::DistanceMatch,
        Self::ClusterMatch,
        Self::Reconfigure,
        Self::Baseline,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Pca => "pca",
            Self::Ica => "ica",
            Self::Grp => "grp",
            Self::Prune => "prune",
            Self::DistanceMatch => "distance-match",
            Self::ClusterMatch => "cluster-match",
            Self::Reconfigure => "reconfigure",
            Self::Baseline => "baseline",
        }
    }

    pub fn is_reducer(self) -> bool {
        matches!(self, Self::Pca | Self::Ica | Self::Grp)
    }

    pub fn trains(self) -> bool {
        !self.is_reducer()
    }

    /// Losses this method accepts. Empty for the closed-form reducers.
    pub fn accepted_losses(self) -> Vec<LossKind> {
        match self {
            Self::Pca | Self::Ica | Self::Grp => vec![],
            Self::DistanceMatch => vec![LossKind::DistanceMatching],
            Self::ClusterMatch => vec![LossKind::ClusterMatching],
            Self::Prune | Self::Reconfigure | Self::Baseline => {
                LossKind::ALL.into_iter().filter(|k| !k.is_distillation()).collect()
            }
        }
    }

    /// Loss used when the config names none.
    pub fn default_loss(self) -> Option<LossKind> {
        match self {
            Self::DistanceMatch => Some(LossKind::DistanceMatching),
            Self::ClusterMatch => Some(LossKind::ClusterMatching),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown method `{s}`"))
    }
}

/// Where the train and validation splits live. Either a manifest or both
/// explicit paths.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val: Option<PathBuf>,
}

impl DataPaths {
    pub fn manifest(path: impl Into<PathBuf>) -> Self {
        Self {
            manifest: Some(path.into()),
            ..Self::default()
        }
    }

    /// Relative paths become relative to `base`.
    pub fn resolved(&self, base: &Path) -> Self {
        let fix = |p: &Option<PathBuf>| p.as_ref().map(|p| if p.is_absolute() { p.clone() } else { base.join(p) });
        Self {
            manifest: fix(&self.manifest),
            train: fix(&self.train),
            val: fix(&self.val),
        }
    }
}

/// One experiment: a method applied at every requested dimension.
///
/// ```toml
/// method = "reconfigure"
/// loss = "normalized-softmax"
/// dims = [16, 32]
/// output_dir = "runs/reconf"
/// seed = 7
///
/// [data]
/// manifest = "data/data.manifest"
///
/// [train]
/// optimizer = "adam"
/// lr = 0.01
/// epochs = 30
/// milestones = [20, 25]
/// ```
///
/// The top-level `seed` and `metric` apply everywhere, so `[train]` and
/// `[ica]` may not set their own.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<LossKind>,
    pub dims: Vec<usize>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub metric: Metric,
    /// Also write per-query average precision as CSV.
    #[serde(default)]
    pub per_query_csv: bool,
    pub data: DataPaths,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prune: Option<PruneConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ica: Option<IcaConfig>,
}

/// Every problem found in a config, reported together.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violations(pub Vec<String>);

impl fmt::Display for Violations {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "invalid configuration ({} problem{}):", self.0.len(), if self.0.len() == 1 { "" } else { "s" })?;
        for v in &self.0 {
            writeln!(f, "  - {v}")?;
        }
        Ok(())
    }
}

impl std::error::Error for Violations {}

const SHADOWED_KEYS: [(&str, &str); 4] = [
    ("train", "seed"),
    ("train", "metric"),
    ("ica", "seed"),
    ("train.loss", "kind"),
];

impl ExperimentConfig {
    pub fn new(method: Method, dims: Vec<usize>, data: DataPaths, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            method,
            loss: None,
            dims,
            output_dir: output_dir.into(),
            seed: 0,
            metric: Metric::default(),
            per_query_csv: false,
            data,
            train: None,
            prune: None,
            ica: None,
        }
    }

    /// Parses TOML, collecting key-level and semantic problems in one list.
    pub fn parse(text: &str) -> Result<Self, Violations> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Violations(vec![e.to_string()]))?;
        let mut problems = Vec::new();
        for (section, key) in SHADOWED_KEYS {
            let mut node = Some(&table);
            for part in section.split('.') {
                node = node.and_then(|t| t.get(part)).and_then(|v| v.as_table());
            }
            if node.is_some_and(|t| t.contains_key(key)) {
                let top = if key == "kind" { "loss" } else { key };
                problems.push(format!("`{section}.{key}` is not allowed; set the top-level `{top}` instead"));
            }
        }
        let cfg: Self = match toml::Value::Table(table).try_into() {
            Ok(c) => c,
            Err(e) => {
                problems.push(e.to_string().trim().to_string());
                return Err(Violations(problems));
            }
        };
        problems.extend(cfg.violations());
        if problems.is_empty() {
            Ok(cfg)
        } else {
            Err(Violations(problems))
        }
    }

    pub fn load(path: &Path) -> Result<Self, Violations> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Violations(vec![format!("cannot read {}: {e}", path.display())]))?;
        Self::parse(&text)
    }

    /// TOML that parses back to the same experiment. Keys covered by the
    /// top-level `seed`, `metric` and `loss` are left out of the sections.
    pub fn to_toml(&self) -> String {
        let mut table = toml::Table::try_from(self).expect("experiment configs always serialize");
        for (section, key) in SHADOWED_KEYS {
            let mut node = Some(&mut table);
            for part in section.split('.') {
                node = node.and_then(|t| t.get_mut(part)).and_then(|v| v.as_table_mut());
            }
            if let Some(t) = node {
                t.remove(key);
            }
        }
        toml::to_string(&table).expect("tables always serialize")
    }

    /// The loss that will actually run.
    pub fn effective_loss(&self) -> Option<LossKind> {
        self.loss.or_else(|| self.method.default_loss())
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let m = self.method;
        if self.dims.is_empty() {
            out.push("dims must list at least one target dimension".into());
        }
        if self.dims.contains(&0) {
            out.push("dims must be positive".into());
        }
        let mut sorted = self.dims.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            out.push(format!("dims contain duplicates: {:?}", self.dims));
        }
        if m == Method::Prune && self.dims.len() > 1 {
            out.push(format!(
                "method prune takes one starting dimension and halves it; got {:?}",
                self.dims
            ));
        }
        if self.output_dir.as_os_str().is_empty() {
            out.push("output_dir is empty".into());
        }

        let d = &self.data;
        match (&d.manifest, &d.train, &d.val) {
            (Some(_), None, None) | (None, Some(_), Some(_)) => {}
            (Some(_), _, _) => out.push("data: give either `manifest` or `train` + `val`, not both".into()),
            _ => out.push("data: give `manifest` or both `train` and `val`".into()),
        }

        let accepted = m.accepted_losses();
        match (self.effective_loss(), accepted.is_empty()) {
            (Some(l), true) => out.push(format!("method {m} does not train, but loss {l} was given")),
            (Some(l), false) if !accepted.contains(&l) => out.push(format!(
                "method {m} is incompatible with loss {l}; expected one of {}",
                names(&accepted)
            )),
            (None, false) => out.push(format!("method {m} needs a loss, one of {}", names(&accepted))),
            _ => {}
        }

        if m.is_reducer() && self.train.is_some() {
            out.push(format!("method {m} does not train; remove [train]"));
        }
        if m != Method::Prune && self.prune.is_some() {
            out.push(format!("[prune] only applies to method prune, not {m}"));
        }
        if m != Method::Ica && self.ica.is_some() {
            out.push(format!("[ica] only applies to method ica, not {m}"));
        }
        if let Some(ica) = &self.ica {
            if ica.max_iter == 0 || !(ica.tol > 0.0) || !(ica.alpha > 0.0) {
                out.push("[ica] needs max_iter >= 1 and positive tol and alpha".into());
            }
        }
        if let Some(p) = &self.prune {
            if !(p.max_map_drop.is_finite() && p.max_map_drop >= 0.0) {
                out.push(format!("[prune] max_map_drop must be non-negative, got {}", p.max_map_drop));
            }
            if p.min_dim == 0 {
                out.push("[prune] min_dim must be at least 1".into());
            }
        }
        if m.trains() || self.train.is_some() {
            out.extend(self.train_config().violations().into_iter().map(|v| format!("[train] {v}")));
        }
        out
    }

    pub fn validate(&self) -> Result<(), Violations> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Violations(v))
        }
    }

    /// `[train]` with the top-level loss, seed and metric filled in.
    pub fn train_config(&self) -> TrainConfig {
        let mut t = self.train.clone().unwrap_or_default();
        if let Some(l) = self.effective_loss() {
            t.loss.kind = l;
        }
        t.seed = self.seed;
        t.metric = self.metric;
        t
    }

    pub fn ica_config(&self) -> IcaConfig {
        IcaConfig {
            seed: self.seed,
            ..self.ica.unwrap_or_default()
        }
    }

    /// Row label in summary tables.
    pub fn label(&self) -> String {
        match self.effective_loss() {
            Some(l) if self.method.default_loss().is_none() => format!("{} ({l})", self.method),
            _ => self.method.to_string(),
        }
    }
}

fn names(kinds: &[LossKind]) -> String {
    kinds.iter().map(|k| k.name()).collect::<Vec<_>>().join(", ")
}
