//! Message-passing network with auto-registration, its three heads, the
//! combined loss and the training loop.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ellipse::{decode_box, encode_box, BoxScales, Ellipse5, EncodedBox};
use crate::graph::{Graph, VertexClass};
use crate::kinematics::{fit_parabola, mean_azimuth, to_conformal, PointXY};
use crate::neural::loss::{clamp_prob, TrackingScales, HUBER_DELTA};
use crate::neural::{
    adam_step, bce_loss, huber_loss, mlp_on_tape, mse_tracking_loss, Activation, AdamHyper, AdamState, GradCheckConfig,
    GradCheckReport, Mlp, MlpSpec, NeuralError, Tape, Tensor2, Var,
};
use crate::wrap_angle;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrackNetError {
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error("model: {0}")]
    Model(String),
    #[error("empty training set")]
    EmptyDataset,
    #[error("non-finite {component} loss at epoch {epoch}, graph {graph_id}")]
    NonFinite {
        epoch: usize,
        graph_id: u64,
        component: &'static str,
    },
}

pub type Result<T> = core::result::Result<T, TrackNetError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
        }
    }
}

/// Input width of the tracking head: three fit coefficients plus the
/// componentwise max of the member states.
pub const TRACKING_FEATURES: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Message-passing iterations.
    pub iterations: usize,
    pub f_spec: MlpSpec,
    pub g_spec: MlpSpec,
    pub h_spec: MlpSpec,
    pub classifier_spec: MlpSpec,
    pub localization_spec: MlpSpec,
    pub tracking_spec: MlpSpec,
    /// Classifier emits two logits `(z₀, z₁)` and `p = softmax₁`.
    pub two_logit_classifier: bool,
    /// When off, `Δx = 0` and `h` is never evaluated.
    pub auto_registration: bool,
    pub loss_weights: LossWeights,
    pub box_scales: BoxScales,
    pub tracking_scales: TrackingScales,
    pub huber_delta: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            iterations: 4,
            h_spec: MlpSpec::uniform(2, 64, 1, 2, Activation::Identity),
            f_spec: MlpSpec::uniform(4, 64, 1, 4, Activation::Identity),
            g_spec: MlpSpec::uniform(6, 64, 1, 2, Activation::Identity),
            classifier_spec: MlpSpec::uniform(2, 64, 3, 1, Activation::Sigmoid),
            localization_spec: MlpSpec::uniform(2, 64, 3, 5, Activation::Identity),
            tracking_spec: MlpSpec::uniform(TRACKING_FEATURES, 64, 2, 2, Activation::Identity),
            two_logit_classifier: false,
            auto_registration: true,
            loss_weights: LossWeights::default(),
            box_scales: BoxScales::default(),
            tracking_scales: TrackingScales::default(),
            huber_delta: HUBER_DELTA,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Same layout with every hidden layer `width` wide.
    pub fn with_hidden_width(mut self, width: usize) -> Self {
        for s in [
            &mut self.f_spec,
            &mut self.g_spec,
            &mut self.h_spec,
            &mut self.classifier_spec,
            &mut self.localization_spec,
            &mut self.tracking_spec,
        ] {
            let n = s.layer_widths.len();
            for w in &mut s.layer_widths[1..n - 1] {
                *w = width;
            }
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TrackNetError::Model(m.into()));
        if self.iterations < 1 {
            return bad("at least one iteration is required");
        }
        for s in [
            &self.f_spec,
            &self.g_spec,
            &self.h_spec,
            &self.classifier_spec,
            &self.localization_spec,
            &self.tracking_spec,
        ] {
            s.validate()?;
        }
        let io = |s: &MlpSpec| (s.input_width(), s.output_width());
        let f_out = self.f_spec.output_width();
        if io(&self.h_spec) != (2, 2) {
            return bad("h must map the 2-wide state to a 2-wide offset");
        }
        if self.f_spec.input_width() != 4 {
            return bad("f takes the 2-wide offset position and the 2-wide state");
        }
        if io(&self.g_spec) != (f_out + 2, 2) {
            return bad("g takes the aggregate and the state and returns a 2-wide state");
        }
        let cls_out = if self.two_logit_classifier { 2 } else { 1 };
        if io(&self.classifier_spec) != (2, cls_out) {
            return bad("classifier width mismatch");
        }
        if self.two_logit_classifier && self.classifier_spec.output_activation != Activation::Identity {
            return bad("two-logit classifier needs identity output logits");
        }
        if io(&self.localization_spec) != (2, 5) {
            return bad("localization head must map the state to 5 encoded residuals");
        }
        if io(&self.tracking_spec) != (TRACKING_FEATURES, 2) {
            return bad("tracking head must map 5 features to (p_T, ε_T)");
        }
        if !(self.huber_delta > 0.0) {
            return bad("Huber knot must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub config: ModelConfig,
    /// One network per iteration.
    pub h: Vec<Mlp>,
    pub f: Vec<Mlp>,
    pub g: Vec<Mlp>,
    pub classifier: Mlp,
    pub localization: Mlp,
    pub tracking: Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VertexOutputs {
    /// Track-hit probability, kept inside `(0, 1)`.
    pub class_prob: Vec<f64>,
    pub encoded_box: Vec<EncodedBox>,
    pub final_state: Vec<[f64; 2]>,
}

/// Per-vertex training targets of a graph.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexTargets {
    pub class: Vec<f64>,
    pub boxes: Vec<EncodedBox>,
    pub mask: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_c: f64,
    pub l_loc: f64,
    pub l_t: f64,
    pub total: f64,
    /// No clusters contributed to `l_t`.
    pub no_clusters: bool,
}

/// Conformal fit features of a cluster. `fit_ok` is false, and the
/// coefficients zero, for fewer than 3 hits or a failed fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterFeatures {
    pub coeffs: [f64; 3],
    pub fit_ok: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterPrediction {
    pub pt: f64,
    pub eps_t: f64,
    pub fit_ok: bool,
}

/// Parabola coefficients of the cluster's hits, fitted in the frame rotated
/// so the hits' mean azimuth lies along `+x`.
pub fn cluster_features(hits_xy: &[PointXY]) -> ClusterFeatures {
    let zero = ClusterFeatures {
        coeffs: [0.0; 3],
        fit_ok: false,
    };
    if hits_xy.len() < 3 {
        return zero;
    }
    let rot = -mean_azimuth(hits_xy);
    let Ok(uv) = hits_xy
        .iter()
        .map(|p| to_conformal(p.rotated(rot)))
        .collect::<core::result::Result<Vec<_>, _>>()
    else {
        return zero;
    };
    match fit_parabola(&uv) {
        Ok(fit) if !fit.is_ill_conditioned() && fit.coeffs.to_array().iter().all(|c| c.is_finite()) => {
            ClusterFeatures {
                coeffs: fit.coeffs.to_array(),
                fit_ok: true,
            }
        }
        _ => zero,
    }
}

/// Variables of every model parameter on one tape.
struct ModelVars {
    h: Vec<Vec<Var>>,
    f: Vec<Vec<Var>>,
    g: Vec<Vec<Var>>,
    classifier: Vec<Var>,
    localization: Vec<Var>,
    tracking: Vec<Var>,
}

impl ModelVars {
    fn flat(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for t in 0..self.h.len() {
            out.extend(&self.h[t]);
            out.extend(&self.f[t]);
            out.extend(&self.g[t]);
        }
        out.extend(&self.classifier);
        out.extend(&self.localization);
        out.extend(&self.tracking);
        out
    }
}

/// Tape variables of a forward pass.
struct Forward {
    vars: ModelVars,
    class_prob: Var,
    boxes: Var,
    state: Var,
}

impl Model {
    /// Seeded initialization; every iteration draws its own parameters.
    pub fn init(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut h = Vec::new();
        let mut f = Vec::new();
        let mut g = Vec::new();
        for _ in 0..config.iterations {
            h.push(Mlp::init(config.h_spec.clone(), &mut rng)?);
            f.push(Mlp::init(config.f_spec.clone(), &mut rng)?);
            g.push(Mlp::init(config.g_spec.clone(), &mut rng)?);
        }
        Ok(Self {
            classifier: Mlp::init(config.classifier_spec.clone(), &mut rng)?,
            localization: Mlp::init(config.localization_spec.clone(), &mut rng)?,
            tracking: Mlp::init(config.tracking_spec.clone(), &mut rng)?,
            h,
            f,
            g,
            config,
        })
    }

    /// All weights and biases zero.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let n = config.iterations;
        let rep = |s: &MlpSpec| -> Result<Vec<Mlp>> { (0..n).map(|_| Ok(Mlp::zeros(s.clone())?)).collect() };
        Ok(Self {
            h: rep(&config.h_spec)?,
            f: rep(&config.f_spec)?,
            g: rep(&config.g_spec)?,
            classifier: Mlp::zeros(config.classifier_spec.clone())?,
            localization: Mlp::zeros(config.localization_spec.clone())?,
            tracking: Mlp::zeros(config.tracking_spec.clone())?,
            config,
        })
    }

    /// Checks that every parameter set matches the configuration.
    pub fn check(&self) -> Result<()> {
        self.config.validate()?;
        let t = self.config.iterations;
        if self.h.len() != t || self.f.len() != t || self.g.len() != t {
            return Err(TrackNetError::Model("per-iteration parameter sets missing".into()));
        }
        let c = &self.config;
        let pairs = self
            .h
            .iter()
            .map(|m| (m, &c.h_spec))
            .chain(self.f.iter().map(|m| (m, &c.f_spec)))
            .chain(self.g.iter().map(|m| (m, &c.g_spec)))
            .chain([
                (&self.classifier, &c.classifier_spec),
                (&self.localization, &c.localization_spec),
                (&self.tracking, &c.tracking_spec),
            ]);
        for (m, spec) in pairs {
            if &m.spec != spec {
                return Err(TrackNetError::Model("network spec differs from configuration".into()));
            }
            m.check_shapes()?;
        }
        Ok(())
    }

    /// Parameters with stable names (`f2.w0`, `classifier.b3`, ...), in
    /// optimizer order.
    pub fn named_params(&self) -> Vec<(String, &Tensor2)> {
        let mut out = Vec::new();
        for (prefix, m) in self.mlp_names().into_iter().zip(self.mlps()) {
            for (k, p) in m.params.iter().enumerate() {
                let kind = if k % 2 == 0 { "w" } else { "b" };
                out.push((alloc::format!("{prefix}.{kind}{}", k / 2), p));
            }
        }
        out
    }

    fn mlp_names(&self) -> Vec<String> {
        let mut v = Vec::new();
        for t in 0..self.h.len() {
            v.push(alloc::format!("h{t}"));
            v.push(alloc::format!("f{t}"));
            v.push(alloc::format!("g{t}"));
        }
        v.extend(["classifier".into(), "localization".into(), "tracking".into()]);
        v
    }

    fn mlps(&self) -> Vec<&Mlp> {
        let mut v = Vec::new();
        for t in 0..self.h.len() {
            v.push(&self.h[t]);
            v.push(&self.f[t]);
            v.push(&self.g[t]);
        }
        v.push(&self.classifier);
        v.push(&self.localization);
        v.push(&self.tracking);
        v
    }

    pub fn params_iter(&self) -> impl Iterator<Item = &Tensor2> {
        self.mlps().into_iter().flat_map(|m| m.params.iter())
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor2> {
        let mut v: Vec<&mut Tensor2> = Vec::new();
        for ((h, f), g) in self.h.iter_mut().zip(self.f.iter_mut()).zip(self.g.iter_mut()) {
            v.extend(h.params.iter_mut());
            v.extend(f.params.iter_mut());
            v.extend(g.params.iter_mut());
        }
        v.extend(self.classifier.params.iter_mut());
        v.extend(self.localization.params.iter_mut());
        v.extend(self.tracking.params.iter_mut());
        v
    }

    pub fn n_params(&self) -> usize {
        self.params_iter().map(|p| p.data.len()).sum()
    }

    fn leaves(&self, tape: &mut Tape) -> Result<ModelVars> {
        let rep =
            |ms: &[Mlp], tape: &mut Tape| -> Result<Vec<Vec<Var>>> { ms.iter().map(|m| Ok(m.leaves(tape)?)).collect() };
        let mut h = Vec::new();
        let mut f = Vec::new();
        let mut g = Vec::new();
        // interleaved per iteration to match `params_mut`
        for t in 0..self.h.len() {
            h.extend(rep(&self.h[t..=t], tape)?);
            f.extend(rep(&self.f[t..=t], tape)?);
            g.extend(rep(&self.g[t..=t], tape)?);
        }
        Ok(ModelVars {
            h,
            f,
            g,
            classifier: self.classifier.leaves(tape)?,
            localization: self.localization.leaves(tape)?,
            tracking: self.tracking.leaves(tape)?,
        })
    }

    fn forward_on_tape(&self, tape: &mut Tape, g: &Graph) -> Result<Forward> {
        self.check()?;
        let c = &self.config;
        let vars = self.leaves(tape)?;
        let n = g.vertices.len();

        // Directed messages: each undirected edge feeds both endpoints.
        let mut dst = Vec::with_capacity(2 * g.edges.len());
        let mut src = Vec::with_capacity(2 * g.edges.len());
        for e in &g.edges {
            dst.push(e.i);
            src.push(e.j);
            dst.push(e.j);
            src.push(e.i);
        }
        let rel: Vec<[f64; 2]> = dst
            .iter()
            .zip(&src)
            .map(|(&i, &j)| {
                let (vi, vj) = (&g.vertices[i], &g.vertices[j]);
                [vj.eta - vi.eta, wrap_angle(vj.phi - vi.phi)]
            })
            .collect();
        let rel = tape.leaf(Tensor2::from_rows(&rel, 2)?)?;
        let s0: Vec<[f64; 2]> = g.vertices.iter().map(|v| v.state).collect();
        let mut s = tape.leaf(Tensor2::from_rows(&s0, 2)?)?;

        for t in 0..c.iterations {
            let offset_pos = if c.auto_registration {
                let dx = mlp_on_tape(tape, &c.h_spec, &vars.h[t], s)?;
                let dx_e = tape.gather_rows(dx, &dst)?;
                tape.add(rel, dx_e)?
            } else {
                rel
            };
            let s_src = tape.gather_rows(s, &src)?;
            let f_in = tape.concat_cols(offset_pos, s_src)?;
            let msg = mlp_on_tape(tape, &c.f_spec, &vars.f[t], f_in)?;
            let agg = tape.segment_max(msg, &dst, n)?;
            let g_in = tape.concat_cols(agg, s)?;
            let upd = mlp_on_tape(tape, &c.g_spec, &vars.g[t], g_in)?;
            s = tape.add(upd, s)?;
        }

        let cls = mlp_on_tape(tape, &c.classifier_spec, &vars.classifier, s)?;
        let class_prob = if c.two_logit_classifier {
            let diff = tape.leaf(Tensor2::from_rows(&[[-1.0], [1.0]], 1)?)?;
            let z = tape.matmul(cls, diff)?;
            tape.sigmoid(z)?
        } else {
            cls
        };
        let boxes = mlp_on_tape(tape, &c.localization_spec, &vars.localization, s)?;
        Ok(Forward {
            vars,
            class_prob,
            boxes,
            state: s,
        })
    }

    /// Tracking-head output for clusters given as vertex index lists, on
    /// the tape. Returns `(k × 2 predictions, features)`.
    fn clusters_on_tape(
        &self,
        tape: &mut Tape,
        vars: &ModelVars,
        state: Var,
        g: &Graph,
        clusters: &[Vec<usize>],
    ) -> Result<(Var, Vec<ClusterFeatures>)> {
        let mut members = Vec::new();
        let mut seg = Vec::new();
        let mut feats = Vec::new();
        for (k, cl) in clusters.iter().enumerate() {
            members.extend(cl);
            seg.extend(core::iter::repeat_n(k, cl.len()));
            let xy: Vec<PointXY> = cl.iter().map(|&i| g.vertices[i].xy()).collect();
            feats.push(cluster_features(&xy));
        }
        let member_states = tape.gather_rows(state, &members)?;
        let pooled = tape.segment_max(member_states, &seg, clusters.len())?;
        let coeffs: Vec<[f64; 3]> = feats.iter().map(|f| f.coeffs).collect();
        let coeffs = tape.leaf(Tensor2::from_rows(&coeffs, 3)?)?;
        let x = tape.concat_cols(coeffs, pooled)?;
        let out = mlp_on_tape(tape, &self.config.tracking_spec, &vars.tracking, x)?;
        Ok((out, feats))
    }
}

fn outputs_from(tape: &Tape, fw: &Forward) -> Result<VertexOutputs> {
    let p = tape.value(fw.class_prob)?;
    let b = tape.value(fw.boxes)?;
    let s = tape.value(fw.state)?;
    Ok(VertexOutputs {
        class_prob: p.data.iter().map(|&x| clamp_prob(x)).collect(),
        encoded_box: (0..b.rows)
            .map(|r| EncodedBox::from_array(core::array::from_fn(|k| b.get(r, k))))
            .collect(),
        final_state: (0..s.rows).map(|r| [s.get(r, 0), s.get(r, 1)]).collect(),
    })
}

/// Runs the message-passing iterations and both per-vertex heads.
pub fn gnn_forward(m: &Model, g: &Graph) -> Result<VertexOutputs> {
    let mut tape = Tape::new();
    let fw = m.forward_on_tape(&mut tape, g)?;
    outputs_from(&tape, &fw)
}

/// Class labels, encoded target boxes (relative to each vertex) and the
/// track-hit mask. Track vertices without a target are masked out.
pub fn vertex_targets(g: &Graph, scales: &BoxScales) -> Result<VertexTargets> {
    let mut t = VertexTargets {
        class: Vec::with_capacity(g.len()),
        boxes: Vec::with_capacity(g.len()),
        mask: Vec::with_capacity(g.len()),
    };
    for v in &g.vertices {
        t.class.push(v.class.target());
        match (v.class, v.target) {
            (VertexClass::Track, Some(e)) => {
                let b = encode_box(&e, v.eta_phi(), scales)
                    .map_err(|err| TrackNetError::Model(alloc::format!("hit {}: {err}", v.hit_id)))?;
                t.boxes.push(b);
                t.mask.push(true);
            }
            _ => {
                t.boxes.push(EncodedBox::ZERO);
                t.mask.push(false);
            }
        }
    }
    Ok(t)
}

/// Weighted sum of the three losses from plain values.
pub fn total_loss(
    outputs: &VertexOutputs,
    targets: &VertexTargets,
    cluster_preds: &[[f64; 2]],
    cluster_truth: &[[f64; 2]],
    w: &LossWeights,
    tracking_scales: &TrackingScales,
    huber_delta: f64,
) -> Result<LossBreakdown> {
    let l_c = bce_loss(&targets.class, &outputs.class_prob)?;
    let l_loc = huber_loss(&outputs.encoded_box, &targets.boxes, &targets.mask, huber_delta)?;
    let (l_t, no_clusters) = mse_tracking_loss(cluster_preds, cluster_truth, tracking_scales)?;
    Ok(LossBreakdown {
        l_c,
        l_loc,
        l_t,
        total: w.alpha * l_c + w.beta * l_loc + w.gamma * l_t,
        no_clusters,
    })
}

/// Vertex groups and `(p_T, ε_T)` of each truth particle present in `g`.
pub fn truth_clusters(g: &Graph) -> (Vec<Vec<usize>>, Vec<[f64; 2]>) {
    let truth: BTreeMap<u64, [f64; 2]> = g.tracks.iter().map(|t| (t.particle_id, [t.pt, t.eps_t])).collect();
    let mut clusters = Vec::new();
    let mut values = Vec::new();
    for (pid, members) in g.truth_clusters() {
        if let Some(v) = truth.get(&pid) {
            clusters.push(members);
            values.push(*v);
        }
    }
    (clusters, values)
}

/// Loss of one graph on a fresh tape, with truth clusters for the tracking
/// term. Returns the loss breakdown and the gradient of every parameter in
/// optimizer order.
pub fn loss_and_gradients(m: &Model, g: &Graph) -> Result<(LossBreakdown, Vec<Tensor2>)> {
    let mut tape = Tape::new();
    let (bd, loss, vars) = record_loss(m, g, &mut tape)?;
    let grads = tape.backward(loss)?;
    let flat = vars
        .flat()
        .into_iter()
        .map(|v| Ok(grads.wrt(v)?.clone()))
        .collect::<Result<Vec<_>>>()?;
    Ok((bd, flat))
}

fn record_loss(m: &Model, g: &Graph, tape: &mut Tape) -> Result<(LossBreakdown, Var, ModelVars)> {
    let c = &m.config;
    let targets = vertex_targets(g, &c.box_scales)?;
    let fw = m.forward_on_tape(tape, g)?;
    let l_c = tape.bce(fw.class_prob, &targets.class)?;
    let tb: Vec<[f64; 5]> = targets.boxes.iter().map(EncodedBox::to_array).collect();
    let l_loc = tape.huber_masked(fw.boxes, &Tensor2::from_rows(&tb, 5)?, &targets.mask, c.huber_delta)?;
    let (clusters, truth) = truth_clusters(g);
    let (pred, _) = m.clusters_on_tape(tape, &fw.vars, fw.state, g, &clusters)?;
    let l_t = tape.mse_scaled(pred, &Tensor2::from_rows(&truth, 2)?, c.tracking_scales)?;
    let w = c.loss_weights;
    let a = tape.scale(l_c, w.alpha)?;
    let b = tape.scale(l_loc, w.beta)?;
    let d = tape.scale(l_t, w.gamma)?;
    let ab = tape.add(a, b)?;
    let total = tape.add(ab, d)?;
    let val = |v: Var| -> Result<f64> { Ok(tape.value(v)?.data[0]) };
    let bd = LossBreakdown {
        l_c: val(l_c)?,
        l_loc: val(l_loc)?,
        l_t: val(l_t)?,
        total: val(total)?,
        no_clusters: clusters.is_empty(),
    };
    Ok((bd, total, fw.vars))
}

/// Scalar training loss of one graph; the finite-difference reference.
pub fn graph_loss(m: &Model, g: &Graph) -> Result<LossBreakdown> {
    let mut tape = Tape::new();
    Ok(record_loss(m, g, &mut tape)?.0)
}

/// Central-difference check of [`loss_and_gradients`] over every model
/// parameter, with the same skipping rules as
/// [`check_gradients`](crate::neural::check_gradients).
pub fn gradient_check_model(m: &Model, g: &Graph, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let eval = |mm: &Model| -> Result<(f64, Vec<usize>, f64)> {
        let mut tape = Tape::new();
        let (bd, _, _) = record_loss(mm, g, &mut tape)?;
        Ok((bd.total, tape.kink_signature(), tape.kink_distance()))
    };
    let (f0, base_sig, kink_distance) = eval(m)?;
    let floor = cfg.denom_floor * f0.abs().max(1.0);
    let (_, grads) = loss_and_gradients(m, g)?;
    let mut report = GradCheckReport {
        kink_distance,
        ..GradCheckReport::default()
    };
    let mut work = m.clone();
    for (pi, grad) in grads.iter().enumerate() {
        for k in 0..grad.data.len() {
            let x0 = work.params_mut()[pi].data[k];
            work.params_mut()[pi].data[k] = x0 + cfg.h;
            let (fp, sp, _) = eval(&work)?;
            work.params_mut()[pi].data[k] = x0 - cfg.h;
            let (fm, sm, _) = eval(&work)?;
            work.params_mut()[pi].data[k] = x0;
            if sp != base_sig || sm != base_sig {
                report.skipped += 1;
                continue;
            }
            let numeric = (fp - fm) / (2.0 * cfg.h);
            let analytic = grad.data[k];
            let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor);
            report.checked += 1;
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = (pi, k);
            }
        }
    }
    Ok(report)
}

/// `(p_T, ε_T)` for each cluster from the final states of a forward pass.
pub fn predict_cluster_params(
    m: &Model,
    final_state: &[[f64; 2]],
    clusters: &[Vec<usize>],
    hits_xy: &[PointXY],
) -> Result<Vec<ClusterPrediction>> {
    m.check()?;
    let mut tape = Tape::new();
    let vars = m.tracking.leaves(&mut tape)?;
    let mut rows = Vec::with_capacity(clusters.len());
    let mut feats = Vec::with_capacity(clusters.len());
    for cl in clusters {
        let xy: Vec<PointXY> = cl.iter().map(|&i| hits_xy[i]).collect();
        let f = cluster_features(&xy);
        let mut pooled = [f64::NEG_INFINITY; 2];
        for &i in cl {
            pooled[0] = pooled[0].max(final_state[i][0]);
            pooled[1] = pooled[1].max(final_state[i][1]);
        }
        if cl.is_empty() {
            pooled = [0.0; 2];
        }
        rows.push([f.coeffs[0], f.coeffs[1], f.coeffs[2], pooled[0], pooled[1]]);
        feats.push(f);
    }
    let x = tape.leaf(Tensor2::from_rows(&rows, TRACKING_FEATURES)?)?;
    let y = mlp_on_tape(&mut tape, &m.config.tracking_spec, &vars, x)?;
    let y = tape.value(y)?;
    Ok(feats
        .iter()
        .enumerate()
        .map(|(k, f)| ClusterPrediction {
            pt: y.get(k, 0),
            eps_t: y.get(k, 1),
            fit_ok: f.fit_ok,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub adam: AdamHyper,
    /// Seeds the per-epoch shuffling.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            adam: AdamHyper::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_c: f64,
    pub l_loc: f64,
    pub l_t: f64,
    pub l_total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub optimizer: AdamState,
}

/// One Adam step per graph, graphs shuffled each epoch by a seeded stream.
/// History entries are the mean pre-step losses over the epoch.
///
/// Pass the optimizer state of an earlier run to resume it.
pub fn train(m: &mut Model, dataset: &[Graph], cfg: &TrainConfig, resume: Option<AdamState>) -> Result<TrainOutcome> {
    if dataset.is_empty() {
        return Err(TrackNetError::EmptyDataset);
    }
    m.check()?;
    let mut opt = resume.unwrap_or_else(|| AdamState::new(cfg.adam, m.params_iter()));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let start = opt.step as usize / dataset.len();
    for epoch in start + 1..=start + cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = LossBreakdown::default();
        for &gi in &order {
            let g = &dataset[gi];
            let (bd, grads) = loss_and_gradients(m, g).map_err(|e| match e {
                TrackNetError::Neural(NeuralError::NonFinite(_)) => TrackNetError::NonFinite {
                    epoch,
                    graph_id: g.event_id,
                    component: "forward",
                },
                other => other,
            })?;
            for (name, v) in [
                ("l_c", bd.l_c),
                ("l_loc", bd.l_loc),
                ("l_t", bd.l_t),
                ("l_total", bd.total),
            ] {
                if !v.is_finite() {
                    return Err(TrackNetError::NonFinite {
                        epoch,
                        graph_id: g.event_id,
                        component: name,
                    });
                }
            }
            let grad_refs: Vec<&Tensor2> = grads.iter().collect();
            adam_step(&mut opt, &mut m.params_mut(), &grad_refs)?;
            sum.l_c += bd.l_c;
            sum.l_loc += bd.l_loc;
            sum.l_t += bd.l_t;
            sum.total += bd.total;
        }
        let n = dataset.len() as f64;
        history.push(EpochRecord {
            epoch,
            l_c: sum.l_c / n,
            l_loc: sum.l_loc / n,
            l_t: sum.l_t / n,
            l_total: sum.total / n,
        });
    }
    Ok(TrainOutcome {
        history,
        optimizer: opt,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inference {
    pub outputs: VertexOutputs,
    /// Decoded ellipse for vertices with `class_prob ≥ threshold`.
    pub ellipses: Vec<Option<Ellipse5>>,
}

/// Encoded log-sizes are clamped to this magnitude before decoding.
const MAX_LOG_SIZE: f64 = 30.0;

pub fn infer(m: &Model, g: &Graph, threshold: f64) -> Result<Inference> {
    let outputs = gnn_forward(m, g)?;
    let ellipses = outputs
        .class_prob
        .iter()
        .zip(&outputs.encoded_box)
        .zip(&g.vertices)
        .map(|((&p, b), v)| {
            (p >= threshold).then(|| {
                let mut b = *b;
                b.d_a = b.d_a.clamp(-MAX_LOG_SIZE, MAX_LOG_SIZE);
                b.d_b = b.d_b.clamp(-MAX_LOG_SIZE, MAX_LOG_SIZE);
                decode_box(&b, v.eta_phi(), &m.config.box_scales)
            })
        })
        .collect();
    Ok(Inference { outputs, ellipses })
}
