use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::metrics::BinaryMetrics;
use super::train::{fit, predict_positive, ClassifierTrainConfig, TrainReport};
use crate::compose::{composite, composite_node, ObjectMask, SceneLayout, SceneTensors};
use crate::datastore::CompositeRecord;
use crate::diffusion::Placement;
use crate::error::{Error, Result};
use crate::ndnet::checkpoint::{read_checkpoint, write_checkpoint};
use crate::ndnet::{avg_pool_forward, Graph, Mlp, Tensor};
use crate::scalar::Scalar;
use crate::synthworld::SynthCorpus;

/// Scenes and objects addressable by id.
#[derive(Clone, Debug, Default)]
pub struct Library {
    scenes: HashMap<String, SceneLayout>,
    objects: HashMap<String, Arc<ObjectMask>>,
}

impl Library {
    pub fn from_corpus(c: &SynthCorpus) -> Self {
        let mut lib = Self::default();
        for s in &c.scenes {
            lib.insert_scene(&s.spec.id, s.layout.clone());
        }
        for o in &c.objects {
            lib.insert_object(&o.id, o.mask.clone());
        }
        lib
    }

    pub fn insert_scene(&mut self, id: &str, scene: SceneLayout) {
        self.scenes.insert(id.to_string(), scene);
    }

    pub fn insert_object(&mut self, id: &str, mask: ObjectMask) {
        self.objects.insert(id.to_string(), Arc::new(mask));
    }

    pub fn scene(&self, id: &str) -> Result<&SceneLayout> {
        self.scenes.get(id).ok_or_else(|| Error::InvalidArgument(format!("unknown scene {id}")))
    }

    pub fn object(&self, id: &str) -> Result<&Arc<ObjectMask>> {
        self.objects.get(id).ok_or_else(|| Error::InvalidArgument(format!("unknown object {id}")))
    }
}

/// Which view of a composite the structural classifier sees.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum InputKind {
    /// Placement and scene descriptor; no spatial layout.
    MaskDescriptor,
    /// Composite layout average-pooled to `G × G` per channel.
    MaskLayout,
}

/// Everything needed to rebuild the input featurization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructMeta {
    pub kind: InputKind,
    pub grid: usize,
    /// Scene channels (the object channel is extra).
    pub channels: usize,
    pub width: usize,
    pub height: usize,
    pub descriptor_dim: usize,
    pub class_weights: [f64; 2],
    /// Per-feature standardization `z = x · scale + offset` fitted on the
    /// training set.
    pub feature_scale: Vec<f64>,
    pub feature_offset: Vec<f64>,
    pub report: Option<TrainReport>,
}

impl StructMeta {
    pub fn input_dim(&self) -> usize {
        match self.kind {
            InputKind::MaskLayout => (self.channels + 1) * self.grid * self.grid,
            InputKind::MaskDescriptor => 3 + self.descriptor_dim,
        }
    }

    fn check_scene(&self, scene: &SceneLayout) -> Result<()> {
        if scene.num_channels() != self.channels
            || scene.width != self.width
            || scene.height != self.height
            || scene.descriptor.len() != self.descriptor_dim
        {
            return Err(Error::shape(
                "struct_classifier",
                format!(
                    "scene {}x{}x{} with {} descriptors, classifier expects {}x{}x{} with {}",
                    scene.num_channels(),
                    scene.height,
                    scene.width,
                    scene.descriptor.len(),
                    self.channels,
                    self.height,
                    self.width,
                    self.descriptor_dim
                ),
            ));
        }
        Ok(())
    }
}

/// Structural plausibility classifier: composite view in, two logits out.
#[derive(Clone, Debug)]
pub struct StructClassifier<T> {
    meta: StructMeta,
    mlp: Mlp<T>,
}

pub const DEFAULT_GRID: usize = 8;

fn descriptor_features<T: Scalar>(scene: &SceneLayout, p: Placement<T>) -> Vec<T> {
    let mut f = p.to_array().to_vec();
    f.extend(scene.descriptor.iter().map(|&d| T::lit(d)));
    f
}

impl<T: Scalar> StructClassifier<T> {
    pub fn meta(&self) -> &StructMeta {
        &self.meta
    }

    pub fn kind(&self) -> InputKind {
        self.meta.kind
    }

    pub fn mlp(&self) -> &Mlp<T> {
        &self.mlp
    }

    pub fn report(&self) -> Option<&TrainReport> {
        self.meta.report.as_ref()
    }

    /// Wraps an existing network; its input width must match `meta`.
    pub fn from_parts(meta: StructMeta, mlp: Mlp<T>) -> Result<Self> {
        if mlp.in_dim() != meta.input_dim() || mlp.out_dim() != 2 {
            return Err(Error::shape("struct_classifier", format!("network {:?} for input width {}", mlp.widths(), meta.input_dim())));
        }
        if meta.feature_scale.len() != meta.input_dim() || meta.feature_offset.len() != meta.input_dim() {
            return Err(Error::shape("struct_classifier", "standardization length differs from input width"));
        }
        if meta.kind == InputKind::MaskLayout && (meta.grid == 0 || meta.width % meta.grid != 0 || meta.height % meta.grid != 0) {
            return Err(Error::InvalidArgument(format!("grid {} must divide {}x{}", meta.grid, meta.width, meta.height)));
        }
        Ok(Self { meta, mlp })
    }

    /// Plain (non-differentiable) feature vector for one composite.
    pub fn features(&self, scene: &SceneLayout, obj: &ObjectMask, p: Placement<T>) -> Result<Vec<T>> {
        self.meta.check_scene(scene)?;
        featurize(&self.meta, scene, obj, p)
    }

    /// Probability that the composite is plausible.
    pub fn prob_positive(&self, scene: &SceneLayout, obj: &ObjectMask, p: Placement<T>) -> Result<T> {
        let f = self.features(scene, obj, p)?;
        let probs = self.mlp.predict_proba(&Tensor::new(vec![1, f.len()], f)?)?;
        Ok(probs.data()[1])
    }

    /// Precomputes the scene side so repeated gradient queries for one
    /// (scene, object) pair are cheap.
    pub fn bind<'a>(&'a self, scene: &SceneLayout, obj: Arc<ObjectMask>) -> Result<BoundStruct<'a, T>> {
        self.meta.check_scene(scene)?;
        let context = match self.meta.kind {
            InputKind::MaskLayout => Context::Layout(SceneTensors::new(scene)?),
            InputKind::MaskDescriptor => {
                let rest = descriptor_features::<T>(scene, Placement::new(T::zero(), T::zero(), T::zero()))[3..].to_vec();
                Context::Descriptor(Tensor::new(vec![1, rest.len()], rest)?)
            }
        };
        let row = |v: &[f64]| Tensor::new(vec![1, v.len()], v.iter().map(|&x| T::lit(x)).collect());
        let scale = Arc::new(row(&self.meta.feature_scale)?);
        let offset = row(&self.meta.feature_offset)?;
        Ok(BoundStruct { cs: self, obj, context, scale, offset })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = serde_json::json!({ "kind": "struct-classifier", "meta": self.meta });
        write_checkpoint(BufWriter::new(File::create(path)?), &self.mlp, &meta)?;
        std::fs::write(path.with_extension("json"), serde_json::to_vec_pretty(&self.meta)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (mlp, meta) = read_checkpoint(BufReader::new(File::open(path)?))?;
        if meta.get("kind").and_then(|k| k.as_str()) != Some("struct-classifier") {
            return Err(Error::Checkpoint(format!("{} is not a structural classifier", path.display())));
        }
        let meta: StructMeta = serde_json::from_value(meta["meta"].clone())?;
        Self::from_parts(meta, mlp)
    }
}

fn featurize<T: Scalar>(meta: &StructMeta, scene: &SceneLayout, obj: &ObjectMask, p: Placement<T>) -> Result<Vec<T>> {
    let raw = raw_features(meta, scene, obj, p)?;
    Ok(raw
        .into_iter()
        .zip(meta.feature_scale.iter().zip(&meta.feature_offset))
        .map(|(x, (&a, &b))| x * T::lit(a) + T::lit(b))
        .collect())
}

fn raw_features<T: Scalar>(meta: &StructMeta, scene: &SceneLayout, obj: &ObjectMask, p: Placement<T>) -> Result<Vec<T>> {
    match meta.kind {
        InputKind::MaskDescriptor => Ok(descriptor_features(scene, p)),
        InputKind::MaskLayout => {
            let c = composite(scene, obj, p)?;
            let flat: Vec<T> = c.channels.concat();
            Ok(avg_pool_forward(&flat, c.channels.len(), c.height, c.width, meta.grid))
        }
    }
}

enum Context<T> {
    Layout(SceneTensors<T>),
    Descriptor(Tensor<T>),
}

/// A structural classifier tied to one scene and object.
pub struct BoundStruct<'a, T: Scalar> {
    cs: &'a StructClassifier<T>,
    obj: Arc<ObjectMask>,
    context: Context<T>,
    scale: Arc<Tensor<T>>,
    offset: Tensor<T>,
}

/// Differentiable log-probability of the positive class for one placement.
pub trait StructScore<T>: Sync {
    /// `log p(plausible | x)` and its gradient with respect to `x = [s, v, h]`.
    fn log_prob_and_grad(&self, x: [T; 3]) -> Result<(T, [T; 3])>;
}

impl<T: Scalar> StructScore<T> for BoundStruct<'_, T> {
    fn log_prob_and_grad(&self, x: [T; 3]) -> Result<(T, [T; 3])> {
        let mut g = Graph::new();
        let xn = g.leaf(Tensor::new(vec![1, 3], x.to_vec())?, true);
        let input = match &self.context {
            Context::Layout(scene) => {
                let comp = composite_node(&mut g, scene, self.obj.clone(), xn)?;
                let m = &self.cs.meta;
                g.avg_pool(comp, m.channels + 1, m.height, m.width, m.grid)?
            }
            Context::Descriptor(rest) => {
                let r = g.leaf(rest.clone(), false);
                g.concat(&[xn, r])?
            }
        };
        let z = g.mul_const(input, self.scale.clone())?;
        let off = g.leaf(self.offset.clone(), false);
        let z = g.add(z, off)?;
        let out = self.cs.mlp.forward(&mut g, z, false)?;
        let lp = g.log_softmax(out.output)?;
        let pos = g.pick(lp, &[1])?;
        let value = g.value(pos).item();
        let grads = g.backward(pos)?;
        let d = grads.get(xn).map_or([T::zero(); 3], |t| [t.data()[0], t.data()[1], t.data()[2]]);
        Ok((value, d))
    }
}

/// `log p(plausible)` of composite `(scene, obj, x)` with its gradient in `x`.
pub fn cs_log_prob_positive<T: Scalar>(
    cs: &StructClassifier<T>,
    scene: &SceneLayout,
    obj: &ObjectMask,
    x: [T; 3],
) -> Result<(T, [T; 3])> {
    cs.bind(scene, Arc::new(obj.clone()))?.log_prob_and_grad(x)
}

fn labeled(records: &[CompositeRecord]) -> Result<Vec<u8>> {
    records
        .iter()
        .map(|r| r.label.ok_or_else(|| Error::InvalidArgument(format!("record {} is unlabeled", r.id))))
        .collect()
}

fn feature_matrix<T: Scalar>(meta: &StructMeta, lib: &Library, records: &[CompositeRecord]) -> Result<Tensor<T>> {
    let mut data = Vec::with_capacity(records.len() * meta.input_dim());
    for r in records {
        let scene = lib.scene(&r.scene_id)?;
        meta.check_scene(scene)?;
        data.extend(featurize(meta, scene, lib.object(&r.object_id)?, r.placement.cast::<T>())?);
    }
    Tensor::new(vec![records.len(), meta.input_dim()], data)
}

/// Trains a structural classifier of the given input kind on labeled
/// composites. Scenes and objects are resolved through `lib`; all scenes
/// must share one geometry. `validation` records, if any, are scored after
/// training.
pub fn train_cs<T: Scalar>(
    lib: &Library,
    records: &[CompositeRecord],
    validation: &[CompositeRecord],
    kind: InputKind,
    grid: usize,
    cfg: &ClassifierTrainConfig,
) -> Result<StructClassifier<T>> {
    let labels = labeled(records)?;
    let first = records.first().ok_or(Error::SingleClass { positives: 0, negatives: 0 })?;
    let scene = lib.scene(&first.scene_id)?;
    let mut meta = StructMeta {
        kind,
        grid,
        channels: scene.num_channels(),
        width: scene.width,
        height: scene.height,
        descriptor_dim: scene.descriptor.len(),
        class_weights: [1.0, 1.0],
        feature_scale: Vec::new(),
        feature_offset: Vec::new(),
        report: None,
    };
    let d = meta.input_dim();
    meta.feature_scale = vec![1.0; d];
    meta.feature_offset = vec![0.0; d];
    let raw = feature_matrix::<T>(&meta, lib, records)?;
    let groups = match kind {
        // one statistic per channel, shared by its G² cells
        InputKind::MaskLayout => grid * grid,
        InputKind::MaskDescriptor => 1,
    };
    (meta.feature_scale, meta.feature_offset) = standardization(&raw, groups);
    let features = feature_matrix::<T>(&meta, lib, records)?;
    let h = cfg.hidden;
    let (mlp, epoch_loss, weights) = fit(&[meta.input_dim(), h, h, h, 2], &features, &labels, cfg)?;
    let train = BinaryMetrics::from_predictions(&predict_positive(&mlp, &features)?, &labels)?;
    meta.class_weights = weights;
    let mut cs = StructClassifier::from_parts(meta, mlp)?;
    let validation = if validation.is_empty() { None } else { Some(evaluate_classifier(&cs, lib, validation)?) };
    cs.meta.report = Some(TrainReport { epoch_loss, class_weights: weights, train, validation });
    Ok(cs)
}

/// Scale and offset mapping each block of `group` consecutive columns to
/// zero mean and unit variance. Near-constant blocks are only centred.
fn standardization<T: Scalar>(x: &Tensor<T>, group: usize) -> (Vec<f64>, Vec<f64>) {
    let (n, d) = (x.rows(), x.cols());
    let mut scale = vec![1.0; d];
    let mut offset = vec![0.0; d];
    for start in (0..d).step_by(group) {
        let cols = start..(start + group).min(d);
        let vals: Vec<f64> = (0..n).flat_map(|i| x.row(i)[cols.clone()].iter().map(|v| v.as_f64())).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        let sd = var.sqrt();
        let a = if sd > 1e-8 { 1.0 / sd } else { 1.0 };
        for j in cols {
            scale[j] = a;
            offset[j] = -mean * a;
        }
    }
    (scale, offset)
}

/// Confusion-matrix metrics of `cs` on labeled records.
pub fn evaluate_classifier<T: Scalar>(cs: &StructClassifier<T>, lib: &Library, records: &[CompositeRecord]) -> Result<BinaryMetrics> {
    if records.is_empty() {
        return Err(Error::Undefined("empty evaluation set".into()));
    }
    let labels = labeled(records)?;
    let features = feature_matrix::<T>(&cs.meta, lib, records)?;
    BinaryMetrics::from_predictions(&predict_positive(&cs.mlp, &features)?, &labels)
}
