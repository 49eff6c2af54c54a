//! The end-to-end adaptation run and its ablation baselines.
//!
//! A run is split into a *source stage*, which is the only code that ever
//! reads a source's samples, and a *target stage*, which only sees what the
//! source stage summarized: model parameters, the Gaussian prototype and a
//! few scalars. The source dataset lives in a [`SourceHandle`] that the
//! source stage releases before returning, so the adaptation path cannot
//! reach it. The distributed protocol drives the same two stages on
//! separate nodes.

mod adapt;
mod bound;
mod ensemble;
mod pseudo;
mod report;
mod weights;

pub use adapt::{adapt_encoder, AdaptConfig, AdaptOutcome, Reference};
pub use bound::{bound_report, confidence_term, BoundInput, BoundReport, BoundTerms, SAMPLE_COUNT_CAP, WASSERSTEIN_ESTIMATOR};
pub use ensemble::{ce_risk, combine, evaluate, jensen_from_probs, predict_ensemble, verify_ensemble_bound, Ensemble, Evaluation, JensenCheck};
pub use pseudo::{decide_from_probs, pseudo_target_distribution, PseudoConfig, PseudoTargetDecision, SamplingMode};
pub use report::{AdaptationReport, DroppedSource, Method, SourceReport};
pub use weights::{compute_weights, WeightStrategy, WEIGHT_EPS};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::gmm::{fit_gmm_latent, sample_intermediate, sample_matching, GmmConfig, GmmPrototype};
use crate::linalg::Matrix;
use crate::neural::{train_source, Architecture, Encoder, ModelParams, TrainConfig};
use crate::rng::Rng;
use crate::swd::DistanceEstimator;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128, 128],
            latent_dim: 64,
        }
    }
}

/// All knobs of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Size of the shared label space; inferred from the source labels when
    /// absent.
    pub classes: Option<usize>,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub gmm: GmmConfig,
    pub adapt: AdaptConfig,
    pub estimator: DistanceEstimator,
    pub pseudo: PseudoConfig,
    pub weighting: WeightStrategy,
    pub seed: u64,
    /// Worker threads for per-source stages; 0 means one per source.
    pub workers: usize,
    /// Source indices that fail after training. Fault injection for tests.
    pub fail_sources: Vec<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            classes: None,
            encoder: EncoderConfig::default(),
            train: TrainConfig::default(),
            gmm: GmmConfig::default(),
            adapt: AdaptConfig::default(),
            estimator: DistanceEstimator::default(),
            pseudo: PseudoConfig::default(),
            weighting: WeightStrategy::Swd,
            seed: 0,
            workers: 1,
            fail_sources: Vec::new(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.adapt.validate()?;
        self.pseudo.validate()?;
        if self.encoder.latent_dim == 0 || self.encoder.hidden.contains(&0) {
            return Err(Error::Config("encoder widths must be positive".into()));
        }
        if self.estimator.projections == 0 || self.estimator.repeats == 0 || self.estimator.max_points == 0 {
            return Err(Error::Config("estimator settings must be positive".into()));
        }
        if !(self.gmm.relative_eps >= 0.0 && self.gmm.eps_floor >= 0.0) {
            return Err(Error::Config("gmm regularization must be non-negative".into()));
        }
        Ok(())
    }

    pub fn architecture(&self, input_dim: usize, classes: usize) -> Architecture {
        Architecture::new(input_dim, self.encoder.hidden.clone(), self.encoder.latent_dim, classes)
    }

    fn source_rng(&self, index: usize) -> Rng {
        Rng::new(self.seed).split(index as u64).split_named("source")
    }

    fn target_rng(&self, index: usize) -> Rng {
        Rng::new(self.seed).split(index as u64).split_named("target")
    }
}

/// Owner of one source's private samples. Once released, reads fail.
#[derive(Debug)]
pub struct SourceHandle {
    data: Option<LabeledDataset>,
}

impl SourceHandle {
    pub fn new(data: LabeledDataset) -> Self {
        Self { data: Some(data) }
    }

    pub fn data(&self) -> Result<&LabeledDataset> {
        self.data.as_ref().ok_or(Error::SourceReleased)
    }

    /// Drops the samples.
    pub fn release(&mut self) {
        self.data = None;
    }

    pub fn is_released(&self) -> bool {
        self.data.is_none()
    }
}

/// What a source stage hands to the target: exactly the data that crosses
/// the node boundary in the distributed protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceSummary {
    pub index: usize,
    pub model: ModelParams,
    pub prototype: GmmPrototype,
    pub source_risk: f64,
    pub source_accuracy: f64,
    pub d_source: f64,
    pub source_count: usize,
}

/// Fixed shape information shared by every stage of a run.
#[derive(Debug, Clone)]
pub struct RunPlan {
    pub config: PipelineConfig,
    pub arch: Architecture,
}

impl RunPlan {
    pub fn new(config: &PipelineConfig, input_dim: usize, classes: usize) -> Result<Self> {
        config.validate()?;
        let arch = config.architecture(input_dim, classes);
        arch.validate()?;
        Ok(Self {
            config: config.clone(),
            arch,
        })
    }

    /// Infers the label space from the sources when the config leaves it open.
    pub fn for_sources(config: &PipelineConfig, sources: &[LabeledDataset], target: &Matrix) -> Result<Self> {
        if sources.is_empty() {
            return Err(Error::Empty("source domains"));
        }
        for s in sources {
            if s.dim() != target.cols() {
                return Err(Error::DimensionMismatch {
                    context: "source feature dimension",
                    expected: target.cols(),
                    found: s.dim(),
                });
            }
        }
        let span = sources.iter().map(LabeledDataset::label_span).max().unwrap_or(0);
        let classes = match config.classes {
            Some(c) if c < span => {
                return Err(Error::Config(format!("labels reach {span} but classes = {c}")));
            }
            Some(c) => c,
            None => span,
        };
        Self::new(config, target.cols(), classes)
    }
}

fn estimate_source_distance(latent: &Matrix, labels: &[usize], gmm: &GmmPrototype, est: &DistanceEstimator, rng: &Rng) -> Result<f64> {
    let m = latent.rows().min(est.max_points);
    let idx = rng.split_named("subsample").sample_indices(latent.rows(), m);
    let points = latent.select_rows(&idx);
    let labs: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
    let draw = sample_matching(gmm, &labs, &mut rng.split_named("draw"))?;
    est.estimate(&points, &draw.samples, &mut rng.split_named("projections"))
}

fn estimate_target_distance(encoder: &Encoder, target: &Matrix, reference: Reference<'_>, est: &DistanceEstimator, rng: &Rng) -> Result<f64> {
    let mut m = target.rows().min(est.max_points);
    if let Reference::Points(p) = reference {
        m = m.min(p.rows());
    }
    let idx = rng.split_named("subsample").sample_indices(target.rows(), m);
    let encoded = encoder.encode(&target.select_rows(&idx))?;
    let mut draw_rng = rng.split_named("draw");
    let other = match reference {
        Reference::Prototype { gmm, distribution } => sample_intermediate(gmm, distribution, m, &mut draw_rng)?.samples,
        Reference::Points(p) => p.select_rows(&draw_rng.sample_indices(p.rows(), m)),
    };
    est.estimate(&encoded, &other, &mut rng.split_named("projections"))
}

struct Trained {
    model: ModelParams,
    latent: Matrix,
    source_risk: f64,
    source_accuracy: f64,
}

fn train_and_encode(index: usize, data: &LabeledDataset, plan: &RunPlan, rng: &Rng) -> Result<Trained> {
    let outcome = train_source(data, &plan.arch, &plan.config.train, &mut rng.split_named("train"))?;
    if plan.config.fail_sources.contains(&index) {
        return Err(Error::NodeFailed(index));
    }
    let stats = outcome.final_stats();
    let latent = outcome.params.encoder.encode(&data.features)?;
    Ok(Trained {
        model: outcome.params,
        latent,
        source_risk: stats.loss,
        source_accuracy: stats.accuracy,
    })
}

/// Source-side work: train `θ_k`, fit the prototype, store `D(S_k, A_k)`,
/// then release the samples.
pub fn source_stage(index: usize, handle: &mut SourceHandle, plan: &RunPlan) -> Result<SourceSummary> {
    let rng = plan.config.source_rng(index);
    let result = (|| {
        let data = handle.data()?;
        if data.is_empty() {
            return Err(Error::Empty("source dataset"));
        }
        let trained = train_and_encode(index, data, plan, &rng)?;
        let prototype = fit_gmm_latent(&trained.latent, &data.labels, plan.arch.classes, &plan.config.gmm)?;
        let d_source = estimate_source_distance(&trained.latent, &data.labels, &prototype, &plan.config.estimator, &rng.split_named("d_source"))?;
        Ok(SourceSummary {
            index,
            model: trained.model,
            prototype,
            source_risk: trained.source_risk,
            source_accuracy: trained.source_accuracy,
            d_source,
            source_count: data.len(),
        })
    })();
    handle.release();
    result
}

/// Target-side result for one source.
#[derive(Debug, Clone)]
pub struct TargetOutcome {
    pub adapted: ModelParams,
    pub report: SourceReport,
}

/// Target-side work for one source: choose the sampling distribution, adapt
/// the encoder against the prototype, store `D(T, A_k)`.
pub fn target_stage(summary: &SourceSummary, name: &str, target: &Matrix, plan: &RunPlan) -> Result<TargetOutcome> {
    let cfg = &plan.config;
    let rng = cfg.target_rng(summary.index);
    let gmm = &summary.prototype;
    let decision = pseudo_target_distribution(&summary.model, target, &gmm.present_classes(), &cfg.pseudo)?;
    let reference = Reference::Prototype {
        gmm,
        distribution: &decision.distribution,
    };
    let d_rng = rng.split_named("d_target");
    let d_target_initial = estimate_target_distance(&summary.model.encoder, target, reference, &cfg.estimator, &d_rng)?;
    let adapted = adapt_encoder(&summary.model.encoder, reference, target, &cfg.adapt, &mut rng.split_named("adapt"))?;
    let d_target_final = estimate_target_distance(&adapted.encoder, target, reference, &cfg.estimator, &d_rng)?;
    Ok(TargetOutcome {
        adapted: ModelParams {
            encoder: adapted.encoder,
            classifier: summary.model.classifier.clone(),
        },
        report: SourceReport {
            index: summary.index,
            name: name.to_string(),
            source_count: summary.source_count,
            source_risk: summary.source_risk,
            source_accuracy: summary.source_accuracy,
            d_source: summary.d_source,
            d_target_initial,
            d_target_final,
            weight: f64::NAN,
            decision,
            omitted_classes: gmm.omitted_classes(),
            trace: adapted.trace,
        },
    })
}

/// Result of a run: the weighted ensemble, the stored report, and the
/// source-only models for comparison.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub ensemble: Ensemble,
    pub report: AdaptationReport,
    pub source_models: Vec<ModelParams>,
}

impl RunOutput {
    /// The ensemble a zero-step run would produce: source-only models weighted
    /// by the pre-adaptation distances.
    pub fn source_only_ensemble(&self) -> Result<Ensemble> {
        let dt: Vec<f64> = self.report.sources.iter().map(|s| s.d_target_initial).collect();
        let ds: Vec<f64> = self.report.sources.iter().map(|s| s.d_source).collect();
        Ensemble::new(
            self.ensemble.names.clone(),
            self.source_models.clone(),
            compute_weights(&dt, &ds, self.report.weighting)?,
        )
    }
}

/// Per-source result reaching the join step.
pub type StageResult = std::result::Result<(TargetOutcome, ModelParams), (usize, String, Error)>;

/// Combine per-source outcomes, in source-index order, into weights and an
/// ensemble. Failed sources are dropped and the weights renormalized.
pub fn join(method: Method, plan: &RunPlan, target_count: usize, results: Vec<StageResult>) -> Result<RunOutput> {
    let mut outcomes = Vec::new();
    let mut source_models = Vec::new();
    let mut dropped = Vec::new();
    for r in results {
        match r {
            Ok((o, src)) => {
                outcomes.push(o);
                source_models.push(src);
            }
            Err((index, name, err)) => {
                warn!("source {index} ({name}) excluded: {err}");
                dropped.push(DroppedSource {
                    index,
                    name,
                    reason: err.to_string(),
                });
            }
        }
    }
    if outcomes.is_empty() {
        return Err(Error::NoSurvivingSources);
    }
    let dt: Vec<f64> = outcomes.iter().map(|o| o.report.d_target_final).collect();
    let ds: Vec<f64> = outcomes.iter().map(|o| o.report.d_source).collect();
    let weights = compute_weights(&dt, &ds, plan.config.weighting)?;
    let mut names = Vec::new();
    let mut models = Vec::new();
    let mut reports = Vec::new();
    for (mut o, &w) in outcomes.into_iter().zip(&weights) {
        o.report.weight = w;
        names.push(o.report.name.clone());
        models.push(o.adapted);
        reports.push(o.report);
    }
    Ok(RunOutput {
        ensemble: Ensemble::new(names, models, weights)?,
        report: AdaptationReport {
            method,
            weighting: plan.config.weighting,
            target_count,
            sources: reports,
            dropped,
        },
        source_models,
    })
}

/// Map `f` over `items` with up to `workers` threads, preserving order.
pub fn par_map<T: Send, R: Send>(items: Vec<T>, workers: usize, f: impl Fn(T) -> R + Sync) -> Vec<R> {
    let workers = if workers == 0 { items.len() } else { workers }.max(1);
    if workers == 1 || items.len() <= 1 {
        return items.into_iter().map(f).collect();
    }
    let mut slots: Vec<Option<R>> = (0..items.len()).map(|_| None).collect();
    let mut queue: Vec<(usize, T)> = items.into_iter().enumerate().collect();
    let chunk = queue.len().div_ceil(workers);
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        while !queue.is_empty() {
            let rest = queue.split_off(queue.len().saturating_sub(chunk));
            let f = &f;
            handles.push(scope.spawn(move || rest.into_iter().map(|(i, t)| (i, f(t))).collect::<Vec<_>>()));
        }
        for h in handles {
            for (i, r) in h.join().expect("worker panicked") {
                slots[i] = Some(r);
            }
        }
    });
    slots.into_iter().map(|r| r.expect("every slot filled")).collect()
}

fn full_stage(index: usize, name: String, handle: SourceHandle, target: &Matrix, plan: &RunPlan) -> StageResult {
    let mut handle = handle;
    let summary = source_stage(index, &mut handle, plan).map_err(|e| (index, name.clone(), e))?;
    debug_assert!(handle.is_released());
    let source_model = summary.model.clone();
    let outcome = target_stage(&summary, &name, target, plan).map_err(|e| (index, name, e))?;
    Ok((outcome, source_model))
}

/// The private pipeline with all nodes in one process.
pub fn run_algorithm1(sources: Vec<LabeledDataset>, target: &Matrix, config: &PipelineConfig) -> Result<RunOutput> {
    run_with_method(Method::Smuda, sources, target, config)
}

fn run_with_method(method: Method, sources: Vec<LabeledDataset>, target: &Matrix, config: &PipelineConfig) -> Result<RunOutput> {
    let plan = RunPlan::for_sources(config, &sources, target)?;
    if target.rows() == 0 {
        return Err(Error::Empty("target features"));
    }
    let jobs: Vec<(usize, String, SourceHandle)> = sources
        .into_iter()
        .enumerate()
        .map(|(i, d)| (i, d.name.clone(), SourceHandle::new(d)))
        .collect();
    let results = par_map(jobs, config.workers, |(i, name, handle)| full_stage(i, name, handle, target, &plan));
    join(method, &plan, target.rows(), results)
}

/// Ablation: align the target straight to each source's encoded samples
/// (source data is shared with the target; not private).
pub fn direct_adapt_baseline(sources: Vec<LabeledDataset>, target: &Matrix, config: &PipelineConfig) -> Result<RunOutput> {
    let plan = RunPlan::for_sources(config, &sources, target)?;
    if target.rows() == 0 {
        return Err(Error::Empty("target features"));
    }
    let jobs: Vec<(usize, LabeledDataset)> = sources.into_iter().enumerate().collect();
    let results = par_map(jobs, config.workers, |(index, data)| {
        let name = data.name.clone();
        direct_stage(index, &data, target, &plan).map_err(|e| (index, name, e))
    });
    join(Method::Direct, &plan, target.rows(), results)
}

fn direct_stage(index: usize, data: &LabeledDataset, target: &Matrix, plan: &RunPlan) -> Result<(TargetOutcome, ModelParams)> {
    let cfg = &plan.config;
    let trained = train_and_encode(index, data, plan, &cfg.source_rng(index))?;
    let rng = cfg.target_rng(index);
    let present: Vec<usize> = {
        let counts = data.class_counts(plan.arch.classes);
        (0..plan.arch.classes).filter(|&c| counts[c] > 0).collect()
    };
    let decision = pseudo_target_distribution(&trained.model, target, &present, &cfg.pseudo)?;
    let reference = Reference::Points(&trained.latent);
    let d_rng = rng.split_named("d_target");
    let d_target_initial = estimate_target_distance(&trained.model.encoder, target, reference, &cfg.estimator, &d_rng)?;
    let adapted = adapt_encoder(&trained.model.encoder, reference, target, &cfg.adapt, &mut rng.split_named("adapt"))?;
    let d_target_final = estimate_target_distance(&adapted.encoder, target, reference, &cfg.estimator, &d_rng)?;
    let omitted = (0..plan.arch.classes).filter(|c| !present.contains(c)).collect();
    Ok((
        TargetOutcome {
            adapted: ModelParams {
                encoder: adapted.encoder,
                classifier: trained.model.classifier.clone(),
            },
            report: SourceReport {
                index,
                name: data.name.clone(),
                source_count: data.len(),
                source_risk: trained.source_risk,
                source_accuracy: trained.source_accuracy,
                d_source: 0.0,
                d_target_initial,
                d_target_final,
                weight: f64::NAN,
                decision,
                omitted_classes: omitted,
                trace: adapted.trace,
            },
        },
        trained.model,
    ))
}

/// Ablation: pool every source into one dataset, then run the prototype
/// pipeline with a single source (not private between sources).
pub fn source_combined_baseline(sources: Vec<LabeledDataset>, target: &Matrix, config: &PipelineConfig) -> Result<RunOutput> {
    if sources.is_empty() {
        return Err(Error::Empty("source domains"));
    }
    let pooled = if sources.len() == 1 {
        sources.into_iter().next().unwrap()
    } else {
        let refs: Vec<&LabeledDataset> = sources.iter().collect();
        LabeledDataset::concat(&refs, "combined")?
    };
    run_with_method(Method::SourceCombined, vec![pooled], target, config)
}
