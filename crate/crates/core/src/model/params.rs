use serde::{Deserialize, Serialize};

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::RunningStats;
use crate::rng::{unit, Rng};

/// Propagation weight, self weight and bias of one convolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gcn<T> {
    pub w: T,
    pub w_self: T,
    pub b: T,
}

/// Trainable scale and shift of one batch norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Affine<T> {
    pub gamma: T,
    pub beta: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer<T> {
    pub graph: Option<Gcn<T>>,
    pub structure: Option<Gcn<T>>,
    pub w_v: Option<T>,
    pub w_f_self: Option<T>,
    pub bn_graph: Option<Affine<T>>,
    pub bn_structure: Option<Affine<T>>,
    pub bn_fusion: Option<Affine<T>>,
    pub bn_attr: Option<Affine<T>>,
}

/// Every trainable tensor, generic so the same layout can hold values or
/// tape handles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weights<T> {
    pub layers: Vec<Layer<T>>,
    pub w_out: T,
    pub b_out: T,
}

fn map_gcn<T, U>(g: &Option<Gcn<T>>, f: &mut impl FnMut(&T) -> U) -> Option<Gcn<U>> {
    g.as_ref().map(|g| Gcn {
        w: f(&g.w),
        w_self: f(&g.w_self),
        b: f(&g.b),
    })
}

fn map_affine<T, U>(a: &Option<Affine<T>>, f: &mut impl FnMut(&T) -> U) -> Option<Affine<U>> {
    a.as_ref().map(|a| Affine {
        gamma: f(&a.gamma),
        beta: f(&a.beta),
    })
}

impl<T> Weights<T> {
    /// Applies `f` to every tensor in [`Weights::visit`] order.
    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> Weights<U> {
        let layers = self
            .layers
            .iter()
            .map(|l| Layer {
                graph: map_gcn(&l.graph, &mut f),
                structure: map_gcn(&l.structure, &mut f),
                w_v: l.w_v.as_ref().map(&mut f),
                w_f_self: l.w_f_self.as_ref().map(&mut f),
                bn_graph: map_affine(&l.bn_graph, &mut f),
                bn_structure: map_affine(&l.bn_structure, &mut f),
                bn_fusion: map_affine(&l.bn_fusion, &mut f),
                bn_attr: map_affine(&l.bn_attr, &mut f),
            })
            .collect();
        Weights {
            layers,
            w_out: f(&self.w_out),
            b_out: f(&self.b_out),
        }
    }

    /// Calls `f(name, tensor)` for every tensor in a fixed order.
    pub fn visit<'a>(&'a self, mut f: impl FnMut(String, &'a T)) {
        for (i, l) in self.layers.iter().enumerate() {
            for (tag, g) in [("graph", &l.graph), ("structure", &l.structure)] {
                if let Some(g) = g {
                    f(format!("layer{i}.{tag}.w"), &g.w);
                    f(format!("layer{i}.{tag}.w_self"), &g.w_self);
                    f(format!("layer{i}.{tag}.b"), &g.b);
                }
            }
            if let Some(w) = &l.w_v {
                f(format!("layer{i}.attr.w_v"), w);
            }
            if let Some(w) = &l.w_f_self {
                f(format!("layer{i}.attr.w_f_self"), w);
            }
            for (tag, a) in [
                ("bn_graph", &l.bn_graph),
                ("bn_structure", &l.bn_structure),
                ("bn_fusion", &l.bn_fusion),
                ("bn_attr", &l.bn_attr),
            ] {
                if let Some(a) = a {
                    f(format!("layer{i}.{tag}.gamma"), &a.gamma);
                    f(format!("layer{i}.{tag}.beta"), &a.beta);
                }
            }
        }
        f("out.w".into(), &self.w_out);
        f("out.b".into(), &self.b_out);
    }

    pub fn named(&self) -> Vec<(String, &T)> {
        let mut out = Vec::new();
        self.visit(|name, t| out.push((name, t)));
        out
    }

    /// Mutable references in [`Weights::visit`] order.
    pub fn tensors_mut(&mut self) -> Vec<&mut T> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            for g in [&mut l.graph, &mut l.structure].into_iter().flatten() {
                out.push(&mut g.w);
                out.push(&mut g.w_self);
                out.push(&mut g.b);
            }
            out.extend(l.w_v.as_mut());
            out.extend(l.w_f_self.as_mut());
            for a in [
                &mut l.bn_graph,
                &mut l.bn_structure,
                &mut l.bn_fusion,
                &mut l.bn_attr,
            ]
            .into_iter()
            .flatten()
            {
                out.push(&mut a.gamma);
                out.push(&mut a.beta);
            }
        }
        out.push(&mut self.w_out);
        out.push(&mut self.b_out);
        out
    }
}

/// Inference statistics of the batch norms of one layer.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LayerStats {
    pub graph: Option<RunningStats>,
    pub structure: Option<RunningStats>,
    pub fusion: Option<RunningStats>,
    pub attr: Option<RunningStats>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnSlot {
    Graph,
    Structure,
    Fusion,
    Attr,
}

impl LayerStats {
    pub fn slot_mut(&mut self, slot: BnSlot) -> Option<&mut RunningStats> {
        match slot {
            BnSlot::Graph => self.graph.as_mut(),
            BnSlot::Structure => self.structure.as_mut(),
            BnSlot::Fusion => self.fusion.as_mut(),
            BnSlot::Attr => self.attr.as_mut(),
        }
    }

    pub fn slot(&self, slot: BnSlot) -> Option<&RunningStats> {
        match slot {
            BnSlot::Graph => self.graph.as_ref(),
            BnSlot::Structure => self.structure.as_ref(),
            BnSlot::Fusion => self.fusion.as_ref(),
            BnSlot::Attr => self.attr.as_ref(),
        }
    }
}

/// Uniform Glorot initialization.
pub fn glorot(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| (2.0 * unit(rng) - 1.0) * limit)
}

/// Configuration, weights and batch-norm statistics of one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub config: ModelConfig,
    /// Attribute count the weights were built for.
    pub d: usize,
    pub weights: Weights<Matrix>,
    pub running: Vec<LayerStats>,
}

impl Model {
    pub fn init(config: &ModelConfig, d: usize, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        if d == 0 {
            return Err(Error::Config("graph has no attributes".into()));
        }
        let comp = config.components;
        let layers_n = config.layers();
        let mut layers = Vec::with_capacity(layers_n);
        let mut running = Vec::with_capacity(layers_n);
        let affine = |c: usize| Affine {
            gamma: Matrix::filled(1, c, 1.0),
            beta: Matrix::zeros(1, c),
        };
        for l in 0..layers_n {
            let out = config.channels[l];
            let hidden = l + 1 < layers_n;
            let gcn = |fan_in: usize, rng: &mut Rng| Gcn {
                w: glorot(fan_in, out, rng),
                w_self: glorot(fan_in, out, rng),
                b: Matrix::zeros(1, out),
            };
            let graph = comp
                .graph_encoder
                .then(|| gcn(config.graph_input_width(l, d), rng));
            let structure = comp
                .structure_encoder
                .then(|| gcn(config.structure_input_width(l), rng));
            let (w_v, w_f_self) = if comp.attribute_encoder {
                let state = config.attribute_state_width(l);
                let w_v = glorot(state, out, rng);
                let w_f_self =
                    hidden.then(|| glorot(state, config.attribute_state_width(l + 1), rng));
                (Some(w_v), w_f_self)
            } else {
                (None, None)
            };
            let fused = config.fused_width(l + 1);
            let mut stats = LayerStats::default();
            let bn_graph = (hidden && comp.graph_encoder).then(|| affine(out));
            let bn_structure =
                (hidden && comp.structure_encoder && !comp.feature_fusion).then(|| affine(out));
            let bn_fusion = (hidden && config.fusion_feeds_back()).then(|| affine(fused));
            let bn_attr = (hidden && comp.attribute_encoder)
                .then(|| affine(config.attribute_state_width(l + 1)));
            stats.graph = bn_graph.as_ref().map(|a| RunningStats::new(a.gamma.cols()));
            stats.structure = bn_structure
                .as_ref()
                .map(|a| RunningStats::new(a.gamma.cols()));
            stats.fusion = bn_fusion
                .as_ref()
                .map(|a| RunningStats::new(a.gamma.cols()));
            stats.attr = bn_attr.as_ref().map(|a| RunningStats::new(a.gamma.cols()));
            layers.push(Layer {
                graph,
                structure,
                w_v,
                w_f_self,
                bn_graph,
                bn_structure,
                bn_fusion,
                bn_attr,
            });
            running.push(stats);
        }
        let w_out = glorot(config.fused_width(layers_n), 1, rng);
        Ok(Self {
            config: config.clone(),
            d,
            weights: Weights {
                layers,
                w_out,
                b_out: Matrix::zeros(1, 1),
            },
            running,
        })
    }

    pub fn parameter_count(&self) -> usize {
        let mut total = 0;
        self.weights.visit(|_, m| total += m.len());
        total
    }

    pub fn tensor_lens(&self) -> Vec<usize> {
        self.weights.named().iter().map(|(_, m)| m.len()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Variant;
    use crate::rng::seeded_rng;

    #[test]
    fn default_shapes() {
        let m = Model::init(&ModelConfig::default(), 1433, &mut seeded_rng(0)).unwrap();
        let l0 = &m.weights.layers[0];
        assert_eq!(l0.graph.as_ref().unwrap().w.shape(), (1433, 128));
        assert_eq!(l0.structure.as_ref().unwrap().w.shape(), (1, 128));
        assert_eq!(l0.w_v.as_ref().unwrap().shape(), (1, 128));
        assert_eq!(l0.w_f_self.as_ref().unwrap().shape(), (1, 384));
        let l1 = &m.weights.layers[1];
        assert_eq!(l1.structure.as_ref().unwrap().w.shape(), (384, 128));
        assert_eq!(l1.w_f_self.as_ref().unwrap().shape(), (384, 384));
        let l2 = &m.weights.layers[2];
        assert!(l2.w_f_self.is_none() && l2.bn_fusion.is_none());
        assert_eq!(m.weights.w_out.shape(), (3, 1));
        assert!(l0
            .graph
            .as_ref()
            .unwrap()
            .b
            .data()
            .iter()
            .all(|&b| b == 0.0));
    }

    #[test]
    fn same_seed_same_init() {
        let c = ModelConfig::default();
        let a = Model::init(&c, 20, &mut seeded_rng(3)).unwrap();
        let b = Model::init(&c, 20, &mut seeded_rng(3)).unwrap();
        assert_eq!(a, b);
        let other = Model::init(&c, 20, &mut seeded_rng(4)).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn visit_order_matches_mutable_order() {
        for v in [
            Variant::Full,
            Variant::NoGe,
            Variant::NoSe,
            Variant::NoAe,
            Variant::NoFf,
        ] {
            let c = v.apply(&ModelConfig {
                channels: vec![3, 2, 1],
                ..Default::default()
            });
            let mut m = Model::init(&c, 4, &mut seeded_rng(1)).unwrap();
            let shapes: Vec<_> = m.weights.named().iter().map(|(_, t)| t.shape()).collect();
            let names: Vec<_> = m.weights.named().into_iter().map(|(n, _)| n).collect();
            let mut unique = names.clone();
            unique.sort();
            unique.dedup();
            assert_eq!(unique.len(), names.len());
            let mut_shapes: Vec<_> = m.weights.tensors_mut().iter().map(|t| t.shape()).collect();
            assert_eq!(shapes, mut_shapes);
            let mapped = m.weights.map(|t| t.shape());
            let mut mapped_shapes = Vec::new();
            mapped.visit(|_, s| mapped_shapes.push(*s));
            assert_eq!(shapes, mapped_shapes);
        }
    }

    #[test]
    fn no_ff_has_structure_norm() {
        let c = Variant::NoFf.apply(&ModelConfig::default());
        let m = Model::init(&c, 10, &mut seeded_rng(0)).unwrap();
        assert!(m.weights.layers[0].bn_structure.is_some());
        assert!(m.weights.layers[0].bn_fusion.is_none());
        assert_eq!(
            m.weights.layers[1].w_v.as_ref().unwrap().shape(),
            (128, 128)
        );
    }
}
