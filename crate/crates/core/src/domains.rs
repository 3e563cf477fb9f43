//! Domain data model, synthetic rotating-domain generators and minibatching.

use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{bail, Result};
use crate::matrix::Matrix;
use crate::rng::DetRng;

pub type DomainId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum DomainRole {
    Source,
    Intermediate,
    Target,
}

impl DomainRole {
    pub fn as_str(self) -> &'static str {
        match self {
            DomainRole::Source => "source",
            DomainRole::Intermediate => "intermediate",
            DomainRole::Target => "target",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "source" => Some(Self::Source),
            "intermediate" => Some(Self::Intermediate),
            "target" => Some(Self::Target),
            _ => None,
        }
    }
}

/// One domain's samples.
///
/// Training labels exist only on the source. Any other labels live in
/// `eval_labels`, which training code never reads.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainDataset {
    pub domain_id: DomainId,
    pub role: DomainRole,
    pub features: Matrix,
    pub labels: Option<Vec<usize>>,
    pub eval_labels: Option<Vec<usize>>,
    /// Continuous index of the domain, e.g. rotation angle in degrees.
    pub meta: Option<f64>,
}

impl DomainDataset {
    pub fn new(
        domain_id: DomainId,
        role: DomainRole,
        features: Matrix,
        labels: Option<Vec<usize>>,
        eval_labels: Option<Vec<usize>>,
        meta: Option<f64>,
    ) -> Result<Self> {
        let n = features.rows();
        if n == 0 {
            bail!(Data, "domain {} has no rows", domain_id);
        }
        match (role, &labels) {
            (DomainRole::Source, None) => bail!(Data, "source domain {} has no labels", domain_id),
            (DomainRole::Intermediate | DomainRole::Target, Some(_)) => bail!(
                Data,
                "{} domain {} carries training labels",
                role.as_str(),
                domain_id
            ),
            _ => {}
        }
        for (what, l) in [("labels", &labels), ("eval labels", &eval_labels)] {
            if let Some(l) = l {
                if l.len() != n {
                    bail!(
                        Data,
                        "domain {}: {} has {} entries for {} rows",
                        domain_id,
                        what,
                        l.len(),
                        n
                    );
                }
            }
        }
        Ok(Self {
            domain_id,
            role,
            features,
            labels,
            eval_labels,
            meta,
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Labels available for scoring: training labels on the source, evaluation
    /// labels elsewhere.
    pub fn scoring_labels(&self) -> Option<&[usize]> {
        self.labels.as_deref().or(self.eval_labels.as_deref())
    }

    pub fn check_labels(&self, num_classes: usize) -> Result<()> {
        for l in [&self.labels, &self.eval_labels].into_iter().flatten() {
            if let Some(bad) = l.iter().find(|&&y| y >= num_classes) {
                bail!(
                    Data,
                    "domain {} has label {} outside [0, {})",
                    self.domain_id,
                    bad,
                    num_classes
                );
            }
        }
        Ok(())
    }
}

/// Validated experiment: exactly one source, one target, at least one
/// intermediate, a shared feature dimension and unique ids.
#[derive(Debug, Clone)]
pub struct Experiment {
    domains: Vec<DomainDataset>,
    source: usize,
    target: usize,
    /// Indices into `domains`, sorted by meta then id.
    intermediates: Vec<usize>,
    num_classes: usize,
}

impl Experiment {
    pub fn new(domains: Vec<DomainDataset>) -> Result<Self> {
        let mut source = None;
        let mut target = None;
        let mut intermediates = Vec::new();
        for (i, d) in domains.iter().enumerate() {
            match d.role {
                DomainRole::Source => {
                    if source.replace(i).is_some() {
                        bail!(Data, "more than one source domain");
                    }
                }
                DomainRole::Target => {
                    if target.replace(i).is_some() {
                        bail!(Data, "more than one target domain");
                    }
                }
                DomainRole::Intermediate => intermediates.push(i),
            }
        }
        let Some(source) = source else {
            bail!(Data, "no source domain")
        };
        let Some(target) = target else {
            bail!(Data, "no target domain")
        };
        if intermediates.is_empty() {
            bail!(Data, "no intermediate domains");
        }
        let dim = domains[source].dim();
        if dim == 0 {
            bail!(Data, "zero-dimensional features");
        }
        for d in &domains {
            if d.dim() != dim {
                bail!(
                    Data,
                    "domain {} has {} features, source has {}",
                    d.domain_id,
                    d.dim(),
                    dim
                );
            }
        }
        let mut ids: Vec<DomainId> = domains.iter().map(|d| d.domain_id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            bail!(Data, "duplicate domain ids");
        }
        intermediates.sort_by(|&a, &b| {
            let (da, db) = (&domains[a], &domains[b]);
            da.meta
                .unwrap_or(f64::NAN)
                .total_cmp(&db.meta.unwrap_or(f64::NAN))
                .then(da.domain_id.cmp(&db.domain_id))
        });
        let num_classes = domains[source]
            .labels
            .as_ref()
            .and_then(|l| l.iter().max())
            .map_or(0, |m| m + 1);
        if num_classes < 2 {
            bail!(Data, "source must contain at least two classes");
        }
        for d in &domains {
            d.check_labels(num_classes)?;
        }
        Ok(Self {
            domains,
            source,
            target,
            intermediates,
            num_classes,
        })
    }

    pub fn domains(&self) -> &[DomainDataset] {
        &self.domains
    }

    pub fn source(&self) -> &DomainDataset {
        &self.domains[self.source]
    }

    pub fn target(&self) -> &DomainDataset {
        &self.domains[self.target]
    }

    /// Intermediates in ascending `meta` order.
    pub fn intermediates(&self) -> impl Iterator<Item = &DomainDataset> + '_ {
        self.intermediates.iter().map(|&i| &self.domains[i])
    }

    pub fn intermediate(&self, k: usize) -> &DomainDataset {
        &self.domains[self.intermediates[k]]
    }

    /// `K`, the size of the intermediate pool.
    pub fn pool_size(&self) -> usize {
        self.intermediates.len()
    }

    pub fn intermediate_ids(&self) -> Vec<DomainId> {
        self.intermediates().map(|d| d.domain_id).collect()
    }

    pub fn by_id(&self, id: DomainId) -> Option<&DomainDataset> {
        self.domains.iter().find(|d| d.domain_id == id)
    }

    pub fn input_dim(&self) -> usize {
        self.source().dim()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }
}

/// Ordered selection of intermediate domain ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(transparent))]
pub struct TransferPath(pub Vec<DomainId>);

impl TransferPath {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn ids(&self) -> &[DomainId] {
        &self.0
    }

    /// Checks `L ≤ K`, distinct entries, and membership in the intermediate pool.
    pub fn validate(&self, intermediate_ids: &[DomainId]) -> Result<()> {
        if self.0.len() > intermediate_ids.len() {
            bail!(
                Contract,
                "path length {} exceeds pool size {}",
                self.0.len(),
                intermediate_ids.len()
            );
        }
        for (i, id) in self.0.iter().enumerate() {
            if !intermediate_ids.contains(id) {
                bail!(Contract, "path entry {} is not an intermediate domain", id);
            }
            if self.0[..i].contains(id) {
                bail!(Contract, "path entry {} repeated", id);
            }
        }
        Ok(())
    }
}

fn check_generator_args(n_per_domain: usize, angles: &[f64], noise_sd: f64) -> Result<()> {
    if angles.len() < 3 {
        bail!(
            Config,
            "need at least 3 angles (source, intermediate, target), got {}",
            angles.len()
        );
    }
    if n_per_domain == 0 {
        bail!(Config, "n_per_domain must be >= 1");
    }
    if !(noise_sd > 0.0 && noise_sd.is_finite()) {
        bail!(Config, "noise_sd must be positive, got {}", noise_sd);
    }
    if angles.iter().any(|a| !a.is_finite()) {
        bail!(Config, "angles must be finite");
    }
    Ok(())
}

fn rotate(p: [f64; 2], degrees: f64) -> [f64; 2] {
    let t = degrees * PI / 180.0;
    let (s, c) = (libm::sin(t), libm::cos(t));
    [c * p[0] - s * p[1], s * p[0] + c * p[1]]
}

fn role_for(i: usize, count: usize) -> DomainRole {
    if i == 0 {
        DomainRole::Source
    } else if i + 1 == count {
        DomainRole::Target
    } else {
        DomainRole::Intermediate
    }
}

fn generate_rotated(
    n_per_domain: usize,
    angles: &[f64],
    noise_sd: f64,
    seed: u64,
    mut clean_point: impl FnMut(usize, &mut DetRng) -> [f64; 2],
) -> Result<Vec<DomainDataset>> {
    check_generator_args(n_per_domain, angles, noise_sd)?;
    let mut root = DetRng::new(seed);
    let mut out = Vec::with_capacity(angles.len());
    for (i, &angle) in angles.iter().enumerate() {
        let mut rng = root.split();
        let mut data = Vec::with_capacity(n_per_domain * 2);
        let mut labels = Vec::with_capacity(n_per_domain);
        for j in 0..n_per_domain {
            let class = j % 2;
            let p = rotate(clean_point(class, &mut rng), angle);
            data.push(p[0] + noise_sd * rng.normal());
            data.push(p[1] + noise_sd * rng.normal());
            labels.push(class);
        }
        let role = role_for(i, angles.len());
        let features = Matrix::new(n_per_domain, 2, data)?;
        let (train, eval) = match role {
            DomainRole::Source => (Some(labels), None),
            _ => (None, Some(labels)),
        };
        out.push(DomainDataset::new(
            i as DomainId,
            role,
            features,
            train,
            eval,
            Some(angle),
        )?);
    }
    Ok(out)
}

/// Two Gaussian classes centred at `(1,0)` and `(−1,0)`, rotated by each angle.
/// The first angle is the source, the last the target.
pub fn generate_rotated_gaussians(
    n_per_domain: usize,
    angles: &[f64],
    noise_sd: f64,
    seed: u64,
) -> Result<Vec<DomainDataset>> {
    generate_rotated(n_per_domain, angles, noise_sd, seed, |class, _| {
        if class == 0 {
            [1.0, 0.0]
        } else {
            [-1.0, 0.0]
        }
    })
}

/// Two interleaving half circles centred on the origin, rotated by each angle.
pub fn generate_rotated_moons(
    n_per_domain: usize,
    angles: &[f64],
    noise_sd: f64,
    seed: u64,
) -> Result<Vec<DomainDataset>> {
    generate_rotated(n_per_domain, angles, noise_sd, seed, |class, rng| {
        let t = rng.uniform() * PI;
        let (c, s) = (libm::cos(t), libm::sin(t));
        if class == 0 {
            [c - 0.5, s - 0.25]
        } else {
            [0.5 - c, 0.25 - s]
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub features: Matrix,
    pub labels: Option<Vec<usize>>,
    pub indices: Vec<usize>,
}

/// `size` distinct row indices drawn uniformly from `0..n` (partial Fisher-Yates).
pub fn sample_indices(n: usize, size: usize, rng: &mut DetRng) -> Result<Vec<usize>> {
    if size == 0 || size > n {
        bail!(Config, "batch size {} must be in 1..={}", size, n);
    }
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..size {
        let j = i + rng.below(n - i);
        idx.swap(i, j);
    }
    idx.truncate(size);
    Ok(idx)
}

/// Uniform minibatch without replacement. Only training labels are attached.
pub fn minibatch(ds: &DomainDataset, size: usize, rng: &mut DetRng) -> Result<Batch> {
    let indices = sample_indices(ds.len(), size, rng)?;
    Ok(Batch {
        features: ds.features.select_rows(&indices),
        labels: ds
            .labels
            .as_ref()
            .map(|l| indices.iter().map(|&i| l[i]).collect()),
        indices,
    })
}
