//! The graph convolution encoder: jointly embeds nodes and relations by
//! composing neighbor states with relation states under direction-specific
//! filters, with optional basis-decomposed relation inputs, plus
//! configuration presets reducing the layer to four prior GCN variants.

pub mod compose;
pub mod layer;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::AugmentedGraph;
use crate::numeric::{
    checkpoint, xavier_uniform, Activation, ParamStore, Tape, Tensor, TensorId,
};

pub use compose::{compose, Composition};
pub use layer::{layer_forward, LayerParams, MessageFn, NormMode, WeightRouting};

/// Prior methods this encoder reduces to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Shared weight, message = `h_u`.
    KipfGcn,
    /// Per-relation weights, message = `h_u`.
    RelationalGcn,
    /// Direction-specific weights, message = `h_u`.
    DirectedGcn,
    /// Shared weight, message = `α_r · h_u` with learnable scalars.
    WeightedGcn,
}

/// Encoder configuration. Serialized as JSON in run configs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Input embedding dimension `d0`.
    pub embed_dim: usize,
    /// Output dimension of each stacked layer; length is `K`.
    pub layer_dims: Vec<usize>,
    pub composition: Composition,
    /// Number of relation basis vectors, or `null` for one independent
    /// embedding per augmented relation.
    #[serde(default)]
    pub num_bases: Option<usize>,
    #[serde(default)]
    pub dropout: f64,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    #[serde(default)]
    pub norm: NormMode,
    /// When set, overrides weight routing and message function to realize
    /// the named prior method.
    #[serde(default)]
    pub preset: Option<Preset>,
}

fn default_activation() -> Activation {
    Activation::Tanh
}

impl ModelConfig {
    pub fn num_layers(&self) -> usize {
        self.layer_dims.len()
    }
}

/// Configuration realizing one of the prior methods.
pub fn reduction_preset(kind: Preset, embed_dim: usize, layer_dims: Vec<usize>) -> ModelConfig {
    ModelConfig {
        embed_dim,
        layer_dims,
        // composition is unused under a preset; Sub is a placeholder
        composition: Composition::Sub,
        num_bases: None,
        dropout: 0.0,
        activation: Activation::Identity,
        norm: NormMode::None,
        preset: Some(kind),
    }
}

enum RelInput {
    /// `relation_embed`: one row per augmented relation.
    Direct { embed: usize },
    /// `z_r = Σ_b α_rb v_b`: coefficients x basis.
    Basis { basis: usize, coeff: usize },
}

struct LayerHandles {
    routing: RoutingHandles,
    w_rel: usize,
}

enum RoutingHandles {
    Direction {
        w_out: usize,
        w_in: usize,
        w_self: usize,
    },
    Shared {
        w: usize,
    },
    SharedScaled {
        w: usize,
        alpha: usize,
    },
    PerRelation {
        ws: Vec<usize>,
    },
}

/// Parameter ids of one forward pass, aligned with the parameter store.
pub struct TapeBinding {
    ids: Vec<TensorId>,
}

impl TapeBinding {
    /// Binding over externally-created leaves, aligned with store order.
    pub fn from_ids(ids: Vec<TensorId>) -> Self {
        TapeBinding { ids }
    }

    pub fn id(&self, param_index: usize) -> TensorId {
        self.ids[param_index]
    }

    /// Gradients per parameter in store order; `None` where a parameter
    /// received none.
    pub fn collect_grads(&self, tape: &Tape) -> Vec<Option<Tensor>> {
        self.ids.iter().map(|&id| tape.grad(id).cloned()).collect()
    }
}

/// Output handles of [`CompGcnModel::encode`].
pub struct EncodeOutput {
    /// Final node states, `|V| x d_K`.
    pub nodes: TensorId,
    /// Final relation states, `|R'| x d_K`.
    pub relations: TensorId,
}

/// The encoder model: entity embeddings, relation inputs (direct or
/// basis-decomposed), and stacked layer weights.
pub struct CompGcnModel {
    config: ModelConfig,
    num_entities: usize,
    num_aug_relations: usize,
    params: ParamStore,
    entity_idx: usize,
    rel_input: RelInput,
    layers: Vec<LayerHandles>,
    message: MessageFn,
}

impl CompGcnModel {
    /// Builds and Xavier-initializes all parameters. `num_aug_relations`
    /// must be `2|R| + 1` for the target graph.
    pub fn new(
        config: ModelConfig,
        num_entities: usize,
        num_aug_relations: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if config.embed_dim == 0 {
            return Err(Error::Config("embed_dim must be positive".into()));
        }
        if num_entities == 0 {
            return Err(Error::Config("model needs at least one entity".into()));
        }
        if let Some(0) = config.num_bases {
            return Err(Error::Config("num_bases must be >= 1 when set".into()));
        }
        let mut params = ParamStore::new();
        let entity_idx = params.insert(
            "entity_embed",
            xavier_uniform((num_entities, config.embed_dim), rng)?,
        );
        let rel_input = match config.num_bases {
            Some(b) => {
                let basis = params.insert("relation_basis", xavier_uniform((b, config.embed_dim), rng)?);
                let coeff = params.insert(
                    "relation_coeff",
                    xavier_uniform((num_aug_relations, b), rng)?,
                );
                RelInput::Basis { basis, coeff }
            }
            None => RelInput::Direct {
                embed: params.insert(
                    "relation_embed",
                    xavier_uniform((num_aug_relations, config.embed_dim), rng)?,
                ),
            },
        };

        fn weight(
            params: &mut ParamStore,
            rng: &mut ChaCha8Rng,
            name: String,
            shape: (usize, usize),
        ) -> Result<usize> {
            Ok(params.insert(name, xavier_uniform(shape, rng)?))
        }

        let mut layers = Vec::with_capacity(config.layer_dims.len());
        let mut d_in = config.embed_dim;
        for (k, &d_out) in config.layer_dims.iter().enumerate() {
            let shape = (d_out, d_in);
            let routing = match config.preset {
                None | Some(Preset::DirectedGcn) => RoutingHandles::Direction {
                    w_out: weight(&mut params, rng, format!("layer{k}.w_out"), shape)?,
                    w_in: weight(&mut params, rng, format!("layer{k}.w_in"), shape)?,
                    w_self: weight(&mut params, rng, format!("layer{k}.w_self"), shape)?,
                },
                Some(Preset::KipfGcn) => RoutingHandles::Shared {
                    w: weight(&mut params, rng, format!("layer{k}.w"), shape)?,
                },
                Some(Preset::WeightedGcn) => {
                    let shared = weight(&mut params, rng, format!("layer{k}.w"), shape)?;
                    let alpha = params.insert(
                        format!("layer{k}.alpha"),
                        Tensor::ones(vec![num_aug_relations, 1]),
                    );
                    RoutingHandles::SharedScaled { w: shared, alpha }
                }
                Some(Preset::RelationalGcn) => {
                    let ws = (0..num_aug_relations)
                        .map(|r| {
                            weight(&mut params, rng, format!("layer{k}.w_rel{r}"), shape)
                        })
                        .collect::<Result<Vec<_>>>()?;
                    RoutingHandles::PerRelation { ws }
                }
            };
            let w_rel = weight(&mut params, rng, format!("layer{k}.w_rel"), shape)?;
            layers.push(LayerHandles { routing, w_rel });
            d_in = d_out;
        }
        let message = match config.preset {
            None => MessageFn::Compose(config.composition),
            Some(_) => MessageFn::NodeOnly,
        };
        Ok(CompGcnModel {
            config,
            num_entities,
            num_aug_relations,
            params,
            entity_idx,
            rel_input,
            layers,
            message,
        })
    }

    /// [`Self::new`] with an internally seeded generator.
    pub fn new_seeded(
        config: ModelConfig,
        num_entities: usize,
        num_aug_relations: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = rand::SeedableRng::seed_from_u64(seed);
        Self::new(config, num_entities, num_aug_relations, &mut rng)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn num_aug_relations(&self) -> usize {
        self.num_aug_relations
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Final embedding dimension after all layers.
    pub fn output_dim(&self) -> usize {
        self.config
            .layer_dims
            .last()
            .copied()
            .unwrap_or(self.config.embed_dim)
    }

    /// Total scalar parameter count. Entity embeddings account for
    /// `|V|·d0`; relation inputs for `B·d0 + |R'|·B` (basis) or `|R'|·d0`;
    /// each layer for its routed weights plus `W_rel`, all `d_out·d_in`.
    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    /// Inserts every parameter as a tape leaf (gradients per trainable
    /// flag) and returns the binding.
    pub fn bind(&self, tape: &mut Tape) -> TapeBinding {
        let ids = (0..self.params.len())
            .map(|i| tape.leaf(self.params.value(i).clone(), self.params.is_trainable(i)))
            .collect();
        TapeBinding { ids }
    }

    /// Inserts every parameter as a constant leaf; used for evaluation.
    pub fn bind_frozen(&self, tape: &mut Tape) -> TapeBinding {
        let ids = (0..self.params.len())
            .map(|i| tape.constant(self.params.value(i).clone()))
            .collect();
        TapeBinding { ids }
    }

    /// Initial relation states `z` (`|R'| x d0`): either the independent
    /// embedding rows or the basis combination `α · V`.
    pub fn materialize_relation_inputs(
        &self,
        tape: &mut Tape,
        binding: &TapeBinding,
    ) -> Result<TensorId> {
        match &self.rel_input {
            RelInput::Direct { embed } => Ok(binding.id(*embed)),
            RelInput::Basis { basis, coeff } => tape.matmul(binding.id(*coeff), binding.id(*basis)),
        }
    }

    /// Runs all `K` layers from `(X, z)`; `K = 0` returns the inputs.
    pub fn encode(
        &self,
        tape: &mut Tape,
        binding: &TapeBinding,
        graph: &AugmentedGraph,
        training: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<EncodeOutput> {
        self.encode_weighted(tape, binding, graph, training, rng, None)
    }

    /// [`Self::encode`] with optional fixed per-edge scalar weights.
    pub fn encode_weighted(
        &self,
        tape: &mut Tape,
        binding: &TapeBinding,
        graph: &AugmentedGraph,
        training: bool,
        rng: &mut ChaCha8Rng,
        edge_weights: Option<&[f64]>,
    ) -> Result<EncodeOutput> {
        if graph.num_entities() != self.num_entities {
            return Err(Error::Config(format!(
                "model built for {} entities, graph has {}",
                self.num_entities,
                graph.num_entities()
            )));
        }
        self.encode_impl(tape, binding, graph, None, training, rng, edge_weights)
    }

    /// Encodes a graph whose rows come from `features` instead of the
    /// model's entity table; used when one embedding table backs many
    /// small graphs (rows gathered per graph upstream).
    pub fn encode_with_features(
        &self,
        tape: &mut Tape,
        binding: &TapeBinding,
        graph: &AugmentedGraph,
        features: TensorId,
        training: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<EncodeOutput> {
        if tape.value(features).rows() != graph.num_entities() {
            return Err(Error::Config(format!(
                "feature rows {} != graph entities {}",
                tape.value(features).rows(),
                graph.num_entities()
            )));
        }
        self.encode_impl(tape, binding, graph, Some(features), training, rng, None)
    }

    #[allow(clippy::too_many_arguments)]
    fn encode_impl(
        &self,
        tape: &mut Tape,
        binding: &TapeBinding,
        graph: &AugmentedGraph,
        features: Option<TensorId>,
        training: bool,
        rng: &mut ChaCha8Rng,
        edge_weights: Option<&[f64]>,
    ) -> Result<EncodeOutput> {
        if graph.aug_relation_count() != self.num_aug_relations {
            return Err(Error::Config(format!(
                "model built for {} augmented relations, graph has {}",
                self.num_aug_relations,
                graph.aug_relation_count()
            )));
        }
        let mut nodes = features.unwrap_or_else(|| binding.id(self.entity_idx));
        let mut relations = self.materialize_relation_inputs(tape, binding)?;
        for handles in &self.layers {
            let routing = match &handles.routing {
                RoutingHandles::Direction { w_out, w_in, w_self } => WeightRouting::Direction {
                    w_out: binding.id(*w_out),
                    w_in: binding.id(*w_in),
                    w_self: binding.id(*w_self),
                },
                RoutingHandles::Shared { w } => WeightRouting::Shared { w: binding.id(*w) },
                RoutingHandles::SharedScaled { w, alpha } => WeightRouting::SharedScaled {
                    w: binding.id(*w),
                    alpha: binding.id(*alpha),
                },
                RoutingHandles::PerRelation { ws } => WeightRouting::PerRelation {
                    ws: ws.iter().map(|&w| binding.id(w)).collect(),
                },
            };
            let params = LayerParams {
                routing,
                message: self.message,
                w_rel: binding.id(handles.w_rel),
                dropout: self.config.dropout,
                activation: self.config.activation,
                norm: self.config.norm,
                edge_weights,
            };
            let (n, r) = layer_forward(tape, graph, nodes, relations, &params, training, rng)?;
            nodes = n;
            relations = r;
        }
        Ok(EncodeOutput { nodes, relations })
    }

    /// Eval-mode encoding to plain tensors (no gradients, dropout off).
    pub fn encode_eval(&self, graph: &AugmentedGraph) -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::new();
        let binding = self.bind_frozen(&mut tape);
        // rng is never consulted in eval mode
        let mut rng = rand::SeedableRng::seed_from_u64(0);
        let out = self.encode(&mut tape, &binding, graph, false, &mut rng)?;
        Ok((
            tape.value(out.nodes).clone(),
            tape.value(out.relations).clone(),
        ))
    }

    /// Writes all parameters to the checkpoint container.
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let arrays: Vec<(&str, &Tensor)> = self.params.iter().collect();
        checkpoint::save(path, &arrays)
    }

    /// Replaces parameter values from a checkpoint; names and shapes must
    /// match the current configuration.
    pub fn load_checkpoint(&mut self, path: &Path) -> Result<()> {
        let arrays = checkpoint::load(path)?;
        if arrays.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} arrays, model has {} parameters",
                arrays.len(),
                self.params.len()
            )));
        }
        for (name, tensor) in arrays {
            let idx = self.params.lookup(&name).ok_or_else(|| {
                Error::Checkpoint(format!("checkpoint array {name} not in model"))
            })?;
            if tensor.shape() != self.params.value(idx).shape() {
                return Err(Error::Checkpoint(format!(
                    "shape mismatch for {name}: checkpoint {:?}, model {:?}",
                    tensor.shape(),
                    self.params.value(idx).shape()
                )));
            }
            *self.params.value_mut(idx) = tensor;
        }
        Ok(())
    }
}
