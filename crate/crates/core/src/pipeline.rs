//! End-to-end stages: prepared data to embeddings, index, trained agent and
//! evaluation report. All randomness derives from one seed.

use crate::agent::AgentNets;
use crate::ann::{Forest, ForestParams};
use crate::data::{prepare, PrepareOptions, PreparedData, RatingEvent};
use crate::env::Simulator;
use crate::error::Result;
use crate::eval::{config_hash, eval_users, evaluate, ActorPolicy, EvalMeta, EvalReport, EvalSettings, PeAblation};
use crate::pmf::{train_pmf, EmbeddingModel, PmfHyperparams};
use crate::scalar::Scalar;
use crate::train::{train, TrainConfig, TrainReport, TrainWorld};
use sha2::{Digest, Sha256};

/// Sub-seed for a named stage.
pub fn derive_seed(seed: u64, stage: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(stage.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub prepare: PrepareOptions,
    /// Embedding width `m`.
    pub dim: usize,
    pub pmf: PmfHyperparams,
    pub forest: ForestParams,
    pub train: TrainConfig,
    pub eval: EvalSettings,
    pub seed: u64,
}

impl PipelineConfig {
    /// Reference defaults with every stage seeded from `seed`.
    pub fn with_seed(seed: u64) -> Self {
        let train = TrainConfig {
            seed: derive_seed(seed, "train-agent"),
            ..TrainConfig::default()
        };
        let mut c = PipelineConfig {
            prepare: PrepareOptions::default(),
            dim: 100,
            pmf: PmfHyperparams::with_seed(derive_seed(seed, "train-embeddings")),
            forest: ForestParams::with_seed(derive_seed(seed, "build-index")),
            train,
            eval: EvalSettings::default(),
            seed,
        };
        c.sync();
        c
    }

    /// Copies the shared list sizes from the training config.
    pub fn sync(&mut self) {
        self.prepare.state_len = self.train.state_len;
        self.eval.state_len = self.train.state_len;
        self.eval.candidates = self.train.candidates;
        self.eval.top_n = self.train.top_n;
        self.eval.lambda = self.train.lambda;
        self.eval.exclude_state = self.train.exclude_state;
    }

    /// Text covering every knob, hashed into report metadata.
    pub fn describe(&self) -> String {
        format!(
            "{}dim = {}\npmf = {:?}\nforest = {:?}\nprepare = {:?}\neval = {:?}\npipeline_seed = {}\n",
            self.train.to_text(),
            self.dim,
            self.pmf,
            self.forest,
            self.prepare,
            self.eval,
            self.seed
        )
    }
}

pub fn build_index<F: Scalar>(model: &EmbeddingModel<F>, params: &ForestParams) -> Result<Forest<F>> {
    Forest::build(model.item_matrix(), model.dim(), params)
}

/// Trains the agent against a simulator that knows the training ratings.
pub fn train_agent<F: Scalar>(
    data: &PreparedData,
    model: &EmbeddingModel<F>,
    forest: &Forest<F>,
    config: &TrainConfig,
) -> Result<(AgentNets<F>, TrainReport)> {
    let sim = Simulator::new(model, F::lit(config.lambda)).with_known(&data.ratings.train);
    let world = TrainWorld {
        histories: &data.positives.train,
        simulator: &sim,
        forest,
    };
    train(config, &world)
}

/// Greedy evaluation against a simulator that knows the held-out ratings.
pub fn evaluate_agent<F: Scalar>(
    data: &PreparedData,
    model: &EmbeddingModel<F>,
    forest: &Forest<F>,
    nets: &AgentNets<F>,
    settings: &EvalSettings,
    use_pe: bool,
    meta: EvalMeta,
) -> Result<EvalReport> {
    let sim = Simulator::new(model, F::lit(settings.lambda)).with_known(&data.ratings.test);
    let users = eval_users(&data.positives.train, &data.positives.test, model, settings.state_len)?;
    let policy = ActorPolicy::new(nets, model, forest, settings, use_pe)?;
    evaluate(&policy, &users, &sim, settings, meta)
}

pub fn eval_meta(config: &PipelineConfig, use_pe: bool) -> EvalMeta {
    EvalMeta {
        config_hash: config_hash(&config.describe()),
        seed: config.seed,
        use_pe,
        steps_per_user: config.eval.steps,
        averaging: "per step, then per user, then across users".into(),
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput<F> {
    pub data: PreparedData,
    pub model: EmbeddingModel<F>,
    pub forest: Forest<F>,
    pub nets: AgentNets<F>,
    pub train_report: TrainReport,
    pub eval_report: EvalReport,
}

pub fn run<F: Scalar>(events: &[RatingEvent], config: &PipelineConfig) -> Result<PipelineOutput<F>> {
    let data = prepare(events, &config.prepare);
    let model = train_pmf::<F>(&data.ratings.train, config.dim, &config.pmf)?.model;
    let forest = build_index(&model, &config.forest)?;
    let (nets, train_report) = train_agent(&data, &model, &forest, &config.train)?;
    let use_pe = config.train.use_pe;
    let eval_report = evaluate_agent(
        &data,
        &model,
        &forest,
        &nets,
        &config.eval,
        use_pe,
        eval_meta(config, use_pe),
    )?;
    Ok(PipelineOutput {
        data,
        model,
        forest,
        nets,
        train_report,
        eval_report,
    })
}

/// Trains and evaluates twice from the same seed, once with positional
/// encodings and once without.
pub fn pe_ablation<F: Scalar>(
    data: &PreparedData,
    model: &EmbeddingModel<F>,
    forest: &Forest<F>,
    config: &PipelineConfig,
) -> Result<PeAblation> {
    let mut reports = Vec::with_capacity(2);
    for use_pe in [true, false] {
        let mut c = config.clone();
        c.train.use_pe = use_pe;
        let (nets, _) = train_agent(data, model, forest, &c.train)?;
        reports.push(evaluate_agent(data, model, forest, &nets, &c.eval, use_pe, eval_meta(config, use_pe))?);
    }
    let without_pe = reports.pop().expect("two reports");
    let with_pe = reports.pop().expect("two reports");
    Ok(PeAblation { with_pe, without_pe })
}
