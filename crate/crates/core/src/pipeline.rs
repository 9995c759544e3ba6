//! End-to-end run: synthesize a corpus, train one recognizer per front-end,
//! decode the test split and score it.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{gen_corpus, write_dataset, CorpusConfig, Dataset, Split};
use crate::decode::{decode_all, write_hypotheses, BeamConfig};
use crate::error::{MddError, Result};
use crate::exec::Execution;
use crate::mddeval::{evaluate, MetricsReport, UttAnnotation};
use crate::seqmodel::{ModelConfig, PhoneVocab};
use crate::train::{train_loop, EpochStats, Example, FrontendKind, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub corpus: CorpusConfig,
    /// Shared training settings; `frontend` is overridden per run.
    pub train: TrainConfig,
    pub decode: BeamConfig,
    pub frontends: Vec<FrontendKind>,
    /// Replace recognizer output by the perceived phones (no training).
    pub oracle: bool,
    /// Optional per-front-end model overrides; presets are used otherwise.
    pub sinc_model: Option<ModelConfig>,
    pub fbank_model: Option<ModelConfig>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            corpus: CorpusConfig::default(),
            train: TrainConfig::default(),
            decode: BeamConfig::default(),
            frontends: vec![FrontendKind::Sinc, FrontendKind::Fbank],
            oracle: false,
            sinc_model: None,
            fbank_model: None,
        }
    }
}

impl PipelineConfig {
    /// Applies one seed to every random component.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.corpus.seed = seed;
        self.train.seed = seed;
        for m in [&mut self.sinc_model, &mut self.fbank_model].into_iter().flatten() {
            m.seed = seed;
        }
        self
    }

    pub fn model_config(&self, kind: FrontendKind, phones: Vec<String>) -> ModelConfig {
        let preset = match kind {
            FrontendKind::Sinc => self.sinc_model.clone(),
            FrontendKind::Fbank => self.fbank_model.clone(),
        };
        match preset {
            Some(mut m) => {
                m.phones = phones;
                m
            }
            None => kind.desk_model(phones, self.train.seed),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        self.train.validate()?;
        self.decode.validate()?;
        if self.frontends.is_empty() {
            return Err(MddError::Config("no front-ends selected".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontendRow {
    pub frontend: String,
    pub best_epoch: usize,
    pub best_dev_loss: f64,
    pub metrics: MetricsReport,
    pub history: Vec<EpochStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub oracle: bool,
    pub test_utterances: usize,
    pub injected_errors: usize,
    pub rows: Vec<FrontendRow>,
}

impl PipelineReport {
    pub fn row(&self, frontend: &str) -> Option<&FrontendRow> {
        self.rows.iter().find(|r| r.frontend == frontend)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

impl fmt::Display for PipelineReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<10} {:>7} {:>10} {:>8} {:>7} {:>7}",
            "front-end", "%PER", "%Precision", "%Recall", "%F1", "%DAR"
        )?;
        for r in &self.rows {
            let m = &r.metrics;
            writeln!(
                f,
                "{:<10} {:>7.2} {:>10.2} {:>8.2} {:>7.2} {:>7.2}",
                r.frontend,
                m.per.unwrap_or(f64::NAN),
                m.precision,
                m.recall,
                m.f1,
                m.dar
            )?;
        }
        Ok(())
    }
}

/// Training examples of one split, targeting the perceived phones.
pub fn examples(ds: &Dataset, split: Split, vocab: &PhoneVocab) -> Result<Vec<Example>> {
    ds.split(split)
        .map(|u| {
            Ok(Example {
                utt_id: u.utt_id().to_string(),
                wave: u.wave.clone(),
                target: vocab.encode(&u.annotation.realized())?,
            })
        })
        .collect()
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| MddError::io(path, e))
}

/// Runs every stage, writing artifacts under `out` when given. `log`
/// receives progress lines; nothing timing-dependent enters the report.
pub fn pipeline_run(
    cfg: &PipelineConfig,
    out: Option<&Path>,
    exec: Execution,
    mut log: impl FnMut(&str),
) -> Result<PipelineReport> {
    cfg.validate().map_err(|e| e.in_stage("config"))?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| MddError::io(dir, e).in_stage("setup"))?;
    }

    log("synth: generating corpus");
    let ds = gen_corpus(&cfg.corpus, exec).map_err(|e| e.in_stage("synth"))?;
    if let Some(dir) = out {
        write_dataset(&ds, &dir.join("corpus")).map_err(|e| e.in_stage("synth"))?;
    }
    let test: Vec<&crate::corpus::Utterance> = ds.split(Split::Test).collect();
    if test.is_empty() {
        return Err(MddError::Config("test split is empty".into()).in_stage("synth"));
    }
    let annotations: Vec<UttAnnotation> = test.iter().map(|u| u.annotation.clone()).collect();
    let injected = annotations.iter().map(UttAnnotation::error_count).sum();
    let vocab = PhoneVocab::new(ds.phone_symbols()).map_err(|e| e.in_stage("synth"))?;

    let mut rows = Vec::new();
    if cfg.oracle {
        let hyps: BTreeMap<String, Vec<String>> = annotations
            .iter()
            .map(|a| (a.utt_id.clone(), a.realized()))
            .collect();
        let metrics = evaluate(&annotations, &hyps).map_err(|e| e.in_stage("eval"))?;
        rows.push(FrontendRow {
            frontend: "oracle".into(),
            best_epoch: 0,
            best_dev_loss: 0.0,
            metrics,
            history: Vec::new(),
        });
    } else {
        let train = examples(&ds, Split::Train, &vocab).map_err(|e| e.in_stage("train"))?;
        let dev = examples(&ds, Split::Dev, &vocab).map_err(|e| e.in_stage("train"))?;
        let test_waves: Vec<(String, crate::frontend::Waveform)> =
            test.iter().map(|u| (u.utt_id().to_string(), u.wave.clone())).collect();
        for &kind in &cfg.frontends {
            let name = kind.name();
            let tcfg = TrainConfig {
                frontend: kind,
                ..cfg.train.clone()
            };
            let mcfg = cfg.model_config(kind, ds.phone_symbols());
            log(&format!("train[{name}]: {} utterances, {} epochs", train.len(), tcfg.epochs));
            let outcome = train_loop(mcfg, &tcfg, &train, &dev, exec, |s| {
                log(&format!(
                    "train[{name}]: epoch {} train loss {:.4} dev loss {:.4}",
                    s.epoch, s.train_loss, s.dev_loss
                ))
            })
            .map_err(|e| e.in_stage("train"))?;
            let ckpt = outcome.checkpoint;
            log(&format!("decode[{name}]: {} utterances", test_waves.len()));
            let hyps = decode_all(&ckpt.model, &test_waves, &cfg.decode, exec).map_err(|e| e.in_stage("decode"))?;
            if let Some(dir) = out {
                let sub = dir.join(name);
                std::fs::create_dir_all(&sub).map_err(|e| MddError::io(&sub, e).in_stage("train"))?;
                ckpt.save(&sub.join("model.ckpt")).map_err(|e| e.in_stage("train"))?;
                let mut buf = Vec::new();
                write_hypotheses(&mut buf, &hyps).map_err(|e| MddError::io(sub.join("hyp.tsv"), e).in_stage("decode"))?;
                write_file(&sub.join("hyp.tsv"), &buf).map_err(|e| e.in_stage("decode"))?;
            }
            let map: BTreeMap<String, Vec<String>> = hyps.into_iter().collect();
            let metrics = evaluate(&annotations, &map).map_err(|e| e.in_stage("eval"))?;
            rows.push(FrontendRow {
                frontend: name.into(),
                best_epoch: ckpt.epoch,
                best_dev_loss: ckpt.best_dev_loss,
                metrics,
                history: outcome.history,
            });
        }
    }
    let report = PipelineReport {
        oracle: cfg.oracle,
        test_utterances: test.len(),
        injected_errors: injected,
        rows,
    };
    if let Some(dir) = out {
        write_file(&dir.join("report.json"), report.to_json().as_bytes()).map_err(|e| e.in_stage("report"))?;
        write_file(&dir.join("report.txt"), report.to_string().as_bytes()).map_err(|e| e.in_stage("report"))?;
    }
    Ok(report)
}
