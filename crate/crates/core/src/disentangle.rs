//! Feature disentanglement: a shared extractor `F`, an invariant head `I`, a
//! specific head `S`, a classifier `C` on invariant features, and MINE statistic
//! networks scoring pairwise dependence between domains.
//!
//! Pairs are always ordered (source, intermediate), (source, target),
//! (intermediate, target) and are formed row-wise, so the three role batches must
//! have the same number of rows.

use alloc::vec::Vec;

use crate::domains::DomainId;
use crate::error::{bail, Result};
use crate::matrix::Matrix;
use crate::mlp::{xavier_init_with, Activations, Direction, Gradients, Mlp, OutputActivation};
use crate::rng::DetRng;

/// Pair order used by every three-element array in this module.
pub const PAIRS: [(Role, Role); 3] = [
    (Role::Source, Role::Intermediate),
    (Role::Source, Role::Target),
    (Role::Intermediate, Role::Target),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Source = 0,
    Intermediate = 1,
    Target = 2,
}

/// Widths after the input layer for each network. The first entry of `invariant`
/// and `specific` is fed by the last entry of `extractor`.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NetworkDims {
    pub extractor: Vec<usize>,
    pub invariant: Vec<usize>,
    pub specific: Vec<usize>,
    pub classifier_hidden: Vec<usize>,
    pub mine_hidden: Vec<usize>,
}

impl Default for NetworkDims {
    fn default() -> Self {
        Self {
            extractor: alloc::vec![16, 8],
            invariant: alloc::vec![8, 4],
            specific: alloc::vec![8, 4],
            classifier_hidden: Vec::new(),
            mine_hidden: alloc::vec![16],
        }
    }
}

impl NetworkDims {
    pub fn validate(&self) -> Result<()> {
        for (name, dims) in [
            ("extractor", &self.extractor),
            ("invariant", &self.invariant),
            ("specific", &self.specific),
        ] {
            if dims.is_empty() {
                bail!(Config, "{} dims must not be empty", name);
            }
        }
        for (name, dims) in [
            ("extractor", &self.extractor),
            ("invariant", &self.invariant),
            ("specific", &self.specific),
            ("classifier_hidden", &self.classifier_hidden),
            ("mine_hidden", &self.mine_hidden),
        ] {
            if dims.contains(&0) {
                bail!(Config, "{} dims must be >= 1", name);
            }
        }
        Ok(())
    }

    fn chain(first: usize, rest: &[usize]) -> Vec<usize> {
        let mut v = alloc::vec![first];
        v.extend_from_slice(rest);
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DisentangleModel {
    pub extractor: Mlp,
    pub invariant: Mlp,
    pub specific: Mlp,
    pub classifier: Mlp,
    /// Statistic networks for the invariant-feature pairs, in [`PAIRS`] order.
    pub mine_invariant: [Mlp; 3],
    /// Statistic networks for the specific-feature pairs, in [`PAIRS`] order.
    pub mine_specific: [Mlp; 3],
}

impl DisentangleModel {
    pub fn new(input_dim: usize, num_classes: usize, dims: &NetworkDims, rng: &mut DetRng) -> Result<Self> {
        dims.validate()?;
        if num_classes < 2 {
            bail!(Config, "need at least two classes, got {}", num_classes);
        }
        let common = *dims.extractor.last().unwrap();
        let inv_out = *dims.invariant.last().unwrap();
        let spec_out = *dims.specific.last().unwrap();
        let extractor = xavier_init_with(
            &NetworkDims::chain(input_dim, &dims.extractor),
            OutputActivation::Identity,
            rng,
        )?;
        let invariant = xavier_init_with(
            &NetworkDims::chain(common, &dims.invariant),
            OutputActivation::Identity,
            rng,
        )?;
        let specific = xavier_init_with(
            &NetworkDims::chain(common, &dims.specific),
            OutputActivation::Identity,
            rng,
        )?;
        let mut cls = NetworkDims::chain(inv_out, &dims.classifier_hidden);
        cls.push(num_classes);
        let classifier = xavier_init_with(&cls, OutputActivation::Softmax, rng)?;
        let mine_net = |width: usize, rng: &mut DetRng| {
            let mut d = NetworkDims::chain(2 * width, &dims.mine_hidden);
            d.push(1);
            xavier_init_with(&d, OutputActivation::Identity, rng)
        };
        let mine_invariant = [
            mine_net(inv_out, rng)?,
            mine_net(inv_out, rng)?,
            mine_net(inv_out, rng)?,
        ];
        let mine_specific = [
            mine_net(spec_out, rng)?,
            mine_net(spec_out, rng)?,
            mine_net(spec_out, rng)?,
        ];
        Ok(Self {
            extractor,
            invariant,
            specific,
            classifier,
            mine_invariant,
            mine_specific,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.extractor.input_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.output_dim()
    }

    /// Class probabilities `C(I(F(x)))`.
    pub fn class_probabilities(&self, x: &Matrix) -> Result<Matrix> {
        let common = self.extractor.predict(x)?;
        let inv = self.invariant.predict(&common)?;
        self.classifier.predict(&inv)
    }
}

/// Invariant and specific features of one batch plus the pooled embedding `phi`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBundle {
    pub f_di: Matrix,
    pub f_ds: Matrix,
    /// Column mean of `f_ds`.
    pub phi: Vec<f64>,
    pub domain_id: DomainId,
}

/// Forward caches needed to back-propagate into `F`, `I` and `S`.
#[derive(Debug, Clone)]
pub struct FeatureTrace {
    common: Activations,
    inv: Activations,
    specific: Activations,
}

impl FeatureTrace {
    pub fn new(model: &DisentangleModel, batch: &Matrix) -> Result<Self> {
        let common = model.extractor.forward(batch)?;
        let inv = model.invariant.forward(common.output())?;
        let specific = model.specific.forward(common.output())?;
        Ok(Self { common, inv, specific })
    }

    pub fn f_di(&self) -> &Matrix {
        self.inv.output()
    }

    pub fn f_ds(&self) -> &Matrix {
        self.specific.output()
    }

    pub fn bundle(&self, domain_id: DomainId) -> FeatureBundle {
        FeatureBundle {
            f_di: self.f_di().clone(),
            f_ds: self.f_ds().clone(),
            phi: self.f_ds().column_means(),
            domain_id,
        }
    }
}

/// `f_di = I(F(batch))`, `f_ds = S(F(batch))`, `phi = mean_rows(f_ds)`.
pub fn extract(model: &DisentangleModel, batch: &Matrix, domain_id: DomainId) -> Result<FeatureBundle> {
    Ok(FeatureTrace::new(model, batch)?.bundle(domain_id))
}

/// Gradients for the feature-side networks.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrads {
    pub extractor: Gradients,
    pub invariant: Gradients,
    pub specific: Gradients,
    pub classifier: Gradients,
}

impl FeatureGrads {
    pub fn zeros(model: &DisentangleModel) -> Self {
        Self {
            extractor: Gradients::zeros_like(&model.extractor),
            invariant: Gradients::zeros_like(&model.invariant),
            specific: Gradients::zeros_like(&model.specific),
            classifier: Gradients::zeros_like(&model.classifier),
        }
    }

    pub fn add_assign(&mut self, other: &FeatureGrads) -> Result<()> {
        self.extractor.add_assign(&other.extractor)?;
        self.invariant.add_assign(&other.invariant)?;
        self.specific.add_assign(&other.specific)?;
        self.classifier.add_assign(&other.classifier)
    }

    /// Pushes `∂L/∂f_di` and `∂L/∂f_ds` of one trace back through `I`, `S`, `F`.
    fn accumulate(
        &mut self,
        model: &DisentangleModel,
        trace: &FeatureTrace,
        g_di: Option<&Matrix>,
        g_ds: Option<&Matrix>,
    ) -> Result<()> {
        let mut g_common = Matrix::zeros(trace.common.output().rows(), trace.common.output().cols());
        if let Some(g) = g_di {
            let (gi, gc) = model.invariant.backward(&trace.inv, g)?;
            self.invariant.add_assign(&gi)?;
            g_common.add_assign(&gc)?;
        }
        if let Some(g) = g_ds {
            let (gs, gc) = model.specific.backward(&trace.specific, g)?;
            self.specific.add_assign(&gs)?;
            g_common.add_assign(&gc)?;
        }
        let (gf, _) = model.extractor.backward(&trace.common, &g_common)?;
        self.extractor.add_assign(&gf)
    }
}

/// Donsker-Varadhan estimate with the caches needed for its gradient.
#[derive(Debug, Clone)]
pub struct MineEstimate {
    pub value: f64,
    joint: Activations,
    marginal: Activations,
    perm: Vec<usize>,
    /// softmax of the marginal scores: `∂ log mean exp / ∂ T(x_i, z̄_i)`.
    weights: Vec<f64>,
    x_cols: usize,
}

/// Gradients of a [`MineEstimate`] value.
#[derive(Debug, Clone)]
pub struct MineGrads {
    pub statistic: Gradients,
    pub x: Matrix,
    pub z: Matrix,
}

fn check_pair(x: &Matrix, z: &Matrix) -> Result<()> {
    if x.rows() != z.rows() {
        bail!(Dimension, "paired batches have {} and {} rows", x.rows(), z.rows());
    }
    if x.rows() < 2 {
        bail!(Config, "need at least 2 rows to form marginal samples, got {}", x.rows());
    }
    Ok(())
}

/// Lower bound `mean T(x,z) − log mean exp T(x, z̄)` with `z̄ = z[perm]`.
pub fn mine_estimate(t: &Mlp, x: &Matrix, z: &Matrix, perm: &[usize]) -> Result<MineEstimate> {
    check_pair(x, z)?;
    if perm.len() != z.rows() {
        bail!(Dimension, "permutation length {} for {} rows", perm.len(), z.rows());
    }
    let n = x.rows() as f64;
    let joint = t.forward(&x.hcat(z)?)?;
    let marginal = t.forward(&x.hcat(&z.select_rows(perm))?)?;
    let tj = joint.output().data();
    let tm = marginal.output().data();
    let mean_joint = tj.iter().sum::<f64>() / n;
    let max = tm.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut weights: Vec<f64> = tm.iter().map(|v| libm::exp(v - max)).collect();
    let sum: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= sum);
    let log_mean_exp = max + libm::log(sum) - libm::log(n);
    Ok(MineEstimate {
        value: mean_joint - log_mean_exp,
        joint,
        marginal,
        perm: perm.to_vec(),
        weights,
        x_cols: x.cols(),
    })
}

/// [`mine_estimate`] with marginal samples from a seeded row shuffle of `z`.
pub fn mine_lower_bound(t: &Mlp, x: &Matrix, z: &Matrix, rng: &mut DetRng) -> Result<MineEstimate> {
    check_pair(x, z)?;
    let perm = rng.permutation(z.rows());
    mine_estimate(t, x, z, &perm)
}

impl MineEstimate {
    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    /// Gradient of `value` with respect to the statistic network and both inputs.
    pub fn backward(&self, t: &Mlp) -> Result<MineGrads> {
        let n = self.weights.len();
        let gj = Matrix::new(n, 1, alloc::vec![1.0 / n as f64; n])?;
        let gm = Matrix::new(n, 1, self.weights.iter().map(|w| -w).collect())?;
        let (mut statistic, in_j) = t.backward(&self.joint, &gj)?;
        let (stat_m, in_m) = t.backward(&self.marginal, &gm)?;
        statistic.add_assign(&stat_m)?;
        let (mut x, mut z) = in_j.split_cols(self.x_cols);
        let (xm, zm_perm) = in_m.split_cols(self.x_cols);
        x.add_assign(&xm)?;
        for (i, &src) in self.perm.iter().enumerate() {
            for (a, b) in z.row_mut(src).iter_mut().zip(zm_perm.row(i)) {
                *a += b;
            }
        }
        Ok(MineGrads { statistic, x, z })
    }
}

/// One batch per role, all with the same number of rows.
#[derive(Debug, Clone, Copy)]
pub struct RoleBatches<'a> {
    pub source: &'a Matrix,
    pub intermediate: &'a Matrix,
    pub target: &'a Matrix,
}

impl RoleBatches<'_> {
    pub fn rows(&self) -> Result<usize> {
        let n = self.source.rows();
        if self.intermediate.rows() != n || self.target.rows() != n {
            bail!(
                Dimension,
                "role batches have {}, {}, {} rows",
                n,
                self.intermediate.rows(),
                self.target.rows()
            );
        }
        Ok(n)
    }
}

/// Marginal-sample permutations, one per pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MarginalPerms(pub [Vec<usize>; 3]);

impl MarginalPerms {
    pub fn draw(n: usize, rng: &mut DetRng) -> Self {
        Self([rng.permutation(n), rng.permutation(n), rng.permutation(n)])
    }
}

/// Traces of the three role batches through the current model.
#[derive(Debug, Clone)]
pub struct RoleTraces([FeatureTrace; 3]);

impl RoleTraces {
    pub fn new(model: &DisentangleModel, batches: &RoleBatches<'_>) -> Result<Self> {
        batches.rows()?;
        Ok(Self([
            FeatureTrace::new(model, batches.source)?,
            FeatureTrace::new(model, batches.intermediate)?,
            FeatureTrace::new(model, batches.target)?,
        ]))
    }

    pub fn get(&self, r: Role) -> &FeatureTrace {
        &self.0[r as usize]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Branch {
    Invariant,
    Specific,
}

/// A loss value with gradients for the feature networks and, for MI losses, the
/// gradient of each pairwise MI estimate with respect to its statistic network.
#[derive(Debug, Clone)]
pub struct LossReport {
    pub value: f64,
    pub estimates: [f64; 3],
    pub grads: FeatureGrads,
    pub mine_grads: Option<[Gradients; 3]>,
}

fn pairwise_mi_loss(
    model: &DisentangleModel,
    traces: &RoleTraces,
    perms: &MarginalPerms,
    branch: Branch,
) -> Result<LossReport> {
    let (nets, sign) = match branch {
        Branch::Invariant => (&model.mine_invariant, -1.0),
        Branch::Specific => (&model.mine_specific, 1.0),
    };
    let feat = |r: Role| match branch {
        Branch::Invariant => traces.get(r).f_di(),
        Branch::Specific => traces.get(r).f_ds(),
    };
    let mut role_grads: [Option<Matrix>; 3] = [None, None, None];
    let mut estimates = [0.0; 3];
    let mut stat_grads: Vec<Gradients> = Vec::with_capacity(3);
    for (p, &(a, b)) in PAIRS.iter().enumerate() {
        let est = mine_estimate(&nets[p], feat(a), feat(b), &perms.0[p])?;
        estimates[p] = est.value;
        let g = est.backward(&nets[p])?;
        for (role, mut gin) in [(a, g.x), (b, g.z)] {
            gin.scale(sign);
            match &mut role_grads[role as usize] {
                Some(acc) => acc.add_assign(&gin)?,
                slot => *slot = Some(gin),
            }
        }
        stat_grads.push(g.statistic);
    }
    let mut grads = FeatureGrads::zeros(model);
    for role in [Role::Source, Role::Intermediate, Role::Target] {
        let g = role_grads[role as usize].as_ref();
        match branch {
            Branch::Invariant => grads.accumulate(model, traces.get(role), g, None)?,
            Branch::Specific => grads.accumulate(model, traces.get(role), None, g)?,
        }
    }
    let mine_grads: [Gradients; 3] = stat_grads
        .try_into()
        .map_err(|_| crate::Error::Contract("three pair gradients expected".into()))?;
    Ok(LossReport {
        value: sign * estimates.iter().sum::<f64>(),
        estimates,
        grads,
        mine_grads: Some(mine_grads),
    })
}

/// `L_mi = −Σ_pairs I(f_di^a; f_di^b)`; gradients reach `F` and `I`.
pub fn invariant_loss(
    model: &DisentangleModel,
    traces: &RoleTraces,
    perms: &MarginalPerms,
) -> Result<LossReport> {
    pairwise_mi_loss(model, traces, perms, Branch::Invariant)
}

/// `L_ms = Σ_pairs I(f_ds^a; f_ds^b)`; gradients reach `F` and `S`.
pub fn specific_loss(
    model: &DisentangleModel,
    traces: &RoleTraces,
    perms: &MarginalPerms,
) -> Result<LossReport> {
    pairwise_mi_loss(model, traces, perms, Branch::Specific)
}

/// Probability floor used inside the log of the cross-entropy.
const PROB_FLOOR: f64 = 1e-300;

/// Mean negative log-probability of the true class and its gradient with respect
/// to the probabilities.
pub fn cross_entropy(probs: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    if probs.rows() != labels.len() {
        bail!(Dimension, "{} label(s) for {} rows", labels.len(), probs.rows());
    }
    if probs.rows() == 0 {
        bail!(Data, "cross-entropy of an empty batch");
    }
    let m = probs.cols();
    if let Some(bad) = labels.iter().find(|&&y| y >= m) {
        bail!(Data, "label {} outside [0, {})", bad, m);
    }
    let n = labels.len() as f64;
    let mut grad = Matrix::zeros(probs.rows(), m);
    let mut loss = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        let p = probs.get(r, y).max(PROB_FLOOR);
        loss -= libm::log(p);
        grad.set(r, y, -1.0 / (n * p));
    }
    Ok((loss / n, grad))
}

/// `L_ce` of `C(f_di^s)`; gradients reach `C`, `I` and `F`.
pub fn classification_loss(
    model: &DisentangleModel,
    source: &FeatureTrace,
    labels: &[usize],
) -> Result<LossReport> {
    let cls = model.classifier.forward(source.f_di())?;
    let (value, g_probs) = cross_entropy(cls.output(), labels)?;
    let (gc, g_di) = model.classifier.backward(&cls, &g_probs)?;
    let mut grads = FeatureGrads::zeros(model);
    grads.classifier = gc;
    grads.accumulate(model, source, Some(&g_di), None)?;
    Ok(LossReport {
        value,
        estimates: [0.0; 3],
        grads,
        mine_grads: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StepRates {
    /// Rate for `F`, `I`, `S`, `C`.
    pub feature: f64,
    /// Rate for the statistic networks.
    pub mine: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepKind {
    /// Both sub-updates.
    Full,
    /// Cross-entropy on `F`, `I`, `C` only.
    ClassifierOnly,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StepLosses {
    pub l_mi: f64,
    pub l_ms: f64,
    pub l_ce: f64,
}

fn ascend_statistics(nets: &mut [Mlp; 3], grads: &[Gradients; 3], rate: f64) -> Result<()> {
    for (net, g) in nets.iter_mut().zip(grads) {
        net.apply_update(g, rate, Direction::Ascent)?;
    }
    Ok(())
}

/// One joint update on a (source, intermediate, target) batch triple:
/// (a) descend `L_mi + L_ce` through `F`, `I`, `C` and ascend the invariant
/// statistics; (b) re-trace, then descend `L_ms` through `F`, `S` and ascend the
/// specific statistics.
pub fn disentangle_step(
    model: &mut DisentangleModel,
    batches: &RoleBatches<'_>,
    source_labels: &[usize],
    rates: StepRates,
    kind: StepKind,
    rng: &mut DetRng,
) -> Result<StepLosses> {
    let n = batches.rows()?;
    let mut losses = StepLosses::default();

    if kind == StepKind::ClassifierOnly {
        let trace = FeatureTrace::new(model, batches.source)?;
        let ce = classification_loss(model, &trace, source_labels)?;
        losses.l_ce = ce.value;
        apply_feature_grads(model, &ce.grads, rates.feature)?;
        return Ok(losses);
    }

    let perms_inv = MarginalPerms::draw(n, rng);
    let perms_spec = MarginalPerms::draw(n, rng);

    let traces = RoleTraces::new(model, batches)?;
    let mi = invariant_loss(model, &traces, &perms_inv)?;
    let ce = classification_loss(model, traces.get(Role::Source), source_labels)?;
    losses.l_mi = mi.value;
    losses.l_ce = ce.value;
    let mut grads = mi.grads;
    grads.add_assign(&ce.grads)?;
    apply_feature_grads(model, &grads, rates.feature)?;
    if let Some(g) = &mi.mine_grads {
        ascend_statistics(&mut model.mine_invariant, g, rates.mine)?;
    }

    let traces = RoleTraces::new(model, batches)?;
    let ms = specific_loss(model, &traces, &perms_spec)?;
    losses.l_ms = ms.value;
    apply_feature_grads(model, &ms.grads, rates.feature)?;
    if let Some(g) = &ms.mine_grads {
        ascend_statistics(&mut model.mine_specific, g, rates.mine)?;
    }
    Ok(losses)
}

fn apply_feature_grads(model: &mut DisentangleModel, g: &FeatureGrads, rate: f64) -> Result<()> {
    model.extractor.apply_update(&g.extractor, rate, Direction::Descent)?;
    model.invariant.apply_update(&g.invariant, rate, Direction::Descent)?;
    model.specific.apply_update(&g.specific, rate, Direction::Descent)?;
    model.classifier.apply_update(&g.classifier, rate, Direction::Descent)
}
