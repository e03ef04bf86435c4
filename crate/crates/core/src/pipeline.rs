//! Corpus-level drivers shared by the command-line tool and the tests.
//!
//! Utterances are processed in parallel on a pool of `jobs` threads
//! (`0` = rayon's default). Results are always collected in input order and
//! reduced sequentially, so outputs do not depend on the thread count.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{join_by_id, oas_wer_report, OasWerReport, WerEntry};
use crate::error::{Error, Result};
use crate::metric::{final_oas, utterance_oas_table, OasAccumulator, OasStats, OasTable};
use crate::store::{load_dump, AnyDump, MANIFEST_FILE};
use crate::synth::{synth_utterance, CorpusTemplate, SynthManifest, WerModel};

/// Runs `f` on a dedicated pool with `jobs` threads.
pub fn with_jobs<R: Send>(jobs: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// `root` itself if it is a dump, otherwise its dump subdirectories sorted
/// by name.
pub fn list_dump_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    if root.join(MANIFEST_FILE).is_file() {
        return Ok(vec![root.to_path_buf()]);
    }
    let mut dirs = Vec::new();
    for entry in fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let p = entry.map_err(|e| Error::io(root, e))?.path();
        if p.join(MANIFEST_FILE).is_file() {
            dirs.push(p);
        }
    }
    dirs.sort();
    Ok(dirs)
}

pub fn any_dump_table(dump: &AnyDump) -> Result<OasTable> {
    match dump {
        AnyDump::F32(d) => utterance_oas_table(d),
        AnyDump::F64(d) => utterance_oas_table(d),
    }
}

/// Per-utterance OAS tables for every dump directory, in input order.
pub fn corpus_oas_tables(dirs: &[PathBuf], jobs: usize) -> Result<NamedTables> {
    with_jobs(jobs, || {
        dirs.par_iter()
            .map(|d| {
                let dump = load_dump(d)?;
                Ok((dump.meta().utterance_id.clone(), any_dump_table(&dump)?))
            })
            .collect::<Result<Vec<_>>>()
    })?
}

/// Contents of `oas_report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OasReport {
    pub per_head: Vec<Vec<f64>>,
    /// Per-layer mean of the `k_layer` best heads (key kept for any k).
    pub per_layer_top7: Vec<f64>,
    /// Top-`k_final` mean of the corpus-averaged table.
    pub final_oas: f64,
    /// Mean over utterances of each utterance's own top-`k_final` mean.
    pub final_oas_per_utterance_mean: f64,
    pub k_layer: usize,
    pub k_final: usize,
    pub n_utts: usize,
    pub aggregation: String,
}

impl OasReport {
    pub fn table(&self) -> Result<OasTable> {
        OasTable::from_rows(&self.per_head)
    }
}

pub fn oas_report(
    tables: &[(String, OasTable)],
    k_layer: usize,
    k_final: usize,
) -> Result<OasReport> {
    let mut acc = OasAccumulator::new();
    let mut per_utt = 0.0;
    for (_, t) in tables {
        acc.add(t)?;
        per_utt += final_oas(t, k_final)?;
    }
    let stats = OasStats::from_table(acc.mean()?, k_layer, k_final)?;
    Ok(OasReport {
        per_head: stats.table.to_nested(),
        per_layer_top7: stats.per_layer_topk_mean,
        final_oas: stats.final_oas,
        final_oas_per_utterance_mean: per_utt / tables.len() as f64,
        k_layer,
        k_final,
        n_utts: tables.len(),
        aggregation: "unweighted_mean".into(),
    })
}

/// One line of the per-utterance OAS file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceOas {
    pub utterance_id: String,
    pub final_oas: f64,
    pub best_layer: usize,
    pub best_head: usize,
}

pub fn utterance_summaries(
    tables: &[(String, OasTable)],
    k_final: usize,
) -> Result<Vec<UtteranceOas>> {
    tables
        .iter()
        .map(|(id, t)| {
            let (best_layer, best_head) = t.best_head();
            Ok(UtteranceOas {
                utterance_id: id.clone(),
                final_oas: final_oas(t, k_final)?,
                best_layer,
                best_head,
            })
        })
        .collect()
}

/// Joins per-utterance final OAS with WER entries and builds the report.
/// Fails if any id lacks a partner.
pub fn correlate(oas: &[UtteranceOas], wer: &[WerEntry]) -> Result<OasWerReport> {
    let pairs: Vec<(String, f64)> = oas
        .iter()
        .map(|u| (u.utterance_id.clone(), u.final_oas))
        .collect();
    let (records, unmatched) = join_by_id(&pairs, wer)?;
    if !unmatched.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{} utterance id(s) lack OAS or WER, first {:?}",
            unmatched.len(),
            unmatched[0]
        )));
    }
    oas_wer_report(&records)
}

/// Utterance ids paired with their OAS tables, in corpus order.
pub type NamedTables = Vec<(String, OasTable)>;

/// Per-utterance tables and WER labels of a synthetic corpus, generated in
/// memory without touching disk.
pub fn synthetic_tables(
    template: &CorpusTemplate,
    n_utts: usize,
    wer_model: &WerModel,
    seed: u64,
    jobs: usize,
) -> Result<(NamedTables, Vec<WerEntry>)> {
    template.validate()?;
    let rows = with_jobs(jobs, || {
        (0..n_utts)
            .into_par_iter()
            .map(|i| {
                let u = synth_utterance::<f32>(template, wer_model, seed, i)?;
                let table = utterance_oas_table(&u.dump)?;
                Ok(((u.id().to_string(), table), u.wer_entry()))
            })
            .collect::<Result<Vec<_>>>()
    })??;
    Ok(rows.into_iter().unzip())
}

/// The OAS/WER correlation report of a synthetic corpus.
pub fn synthetic_correlation(
    template: &CorpusTemplate,
    n_utts: usize,
    wer_model: &WerModel,
    seed: u64,
    k_final: usize,
    jobs: usize,
) -> Result<OasWerReport> {
    let (tables, wer) = synthetic_tables(template, n_utts, wer_model, seed, jobs)?;
    correlate(&utterance_summaries(&tables, k_final)?, &wer)
}

/// Serializes items one JSON object per line.
pub fn to_jsonl<T: Serialize>(items: &[T]) -> Result<String> {
    let mut out = String::new();
    for it in items {
        out.push_str(&serde_json::to_string(it).map_err(|source| Error::Json {
            context: "jsonl record".into(),
            source,
        })?);
        out.push('\n');
    }
    Ok(out)
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l).map_err(|source| Error::Json {
                context: format!("{}:{}", path.display(), n + 1),
                source,
            })
        })
        .collect()
}

pub const WER_FILE: &str = "wer.jsonl";
pub const SYNTH_SPEC_FILE: &str = "synth_spec.json";

/// Writes `n_utts` synthetic dumps under `dir/utt_NNNNN/` plus `wer.jsonl`
/// and `synth_spec.json`.
pub fn write_synthetic_corpus(
    dir: &Path,
    template: &CorpusTemplate,
    n_utts: usize,
    wer_model: &WerModel,
    seed: u64,
    jobs: usize,
) -> Result<()> {
    template.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let wer = with_jobs(jobs, || {
        (0..n_utts)
            .into_par_iter()
            .map(|i| {
                let u = synth_utterance::<f32>(template, wer_model, seed, i)?;
                u.dump.save(dir.join(u.id()))?;
                Ok(u.wer_entry())
            })
            .collect::<Result<Vec<_>>>()
    })??;
    let wer_path = dir.join(WER_FILE);
    fs::write(&wer_path, to_jsonl(&wer)?).map_err(|e| Error::io(&wer_path, e))?;
    let manifest = SynthManifest::new(template.clone(), *wer_model, n_utts, seed);
    let mut json = serde_json::to_string_pretty(&manifest).map_err(|source| Error::Json {
        context: "synth spec".into(),
        source,
    })?;
    json.push('\n');
    let spec_path = dir.join(SYNTH_SPEC_FILE);
    fs::write(&spec_path, json).map_err(|e| Error::io(&spec_path, e))
}
