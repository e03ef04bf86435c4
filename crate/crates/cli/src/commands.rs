use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use oas_align::analysis::join_by_id;
use oas_align::losses::{oas_loss_grad_wrt_a_with, oas_loss_with, OasLossOptions};
use oas_align::metric::{utterance_oas_table, OasAccumulator};
use oas_align::pipeline::{
    corpus_oas_tables, list_dump_dirs, oas_report, read_jsonl, to_jsonl, utterance_summaries,
    with_jobs, write_synthetic_corpus, OasReport, WER_FILE,
};
use oas_align::seed::derive_seed;
use oas_align::selfcheck::run_all;
use oas_align::store::row_sum_ranges;
use oas_align::supervision::SupervisionRecord;
use oas_align::synth::{CorpusTemplate, WerModel};
use oas_align::{
    build_supervision_from_matrix, load_dump, oas, oas_wer_report, optimal_path, path_to_durations,
    select_alignment_heads, AnyDump, AttentionDump, Error, HeadPolicy, HeadSet, TokenSequence,
    WerEntry,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{
    Command, CorrArgs, InputArgs, LossArgs, OasArgs, PathArgs, PolicyArgs, PolicyKind, SelectArgs,
    SuperviseArgs, SynthArgs,
};

pub struct Failure {
    pub kind: &'static str,
    pub message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            kind: e.kind(),
            message: e.to_string(),
        }
    }
}

type CmdResult<T = ()> = Result<T, Failure>;

pub fn run(cmd: Command) -> CmdResult {
    match cmd {
        Command::Inspect { dump } => inspect(&dump),
        Command::Oas(a) => oas_cmd(a),
        Command::SelectHeads(a) => select_heads(a),
        Command::Path(a) => path_cmd(a),
        Command::Supervise(a) => supervise(a),
        Command::Loss(a) => loss(a),
        Command::Corr(a) => corr(a),
        Command::Synth(a) => synth(a),
        Command::Selfcheck { seed } => selfcheck(seed),
    }
}

fn write_file(path: &Path, contents: &str) -> CmdResult {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|source| Error::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, contents).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    info!("wrote {}", path.display());
    Ok(())
}

fn pretty<T: Serialize>(value: &T) -> CmdResult<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        context: "output".into(),
        source,
    })?;
    s.push('\n');
    Ok(s)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CmdResult<T> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(serde_json::from_str(&text).map_err(|source| Error::Json {
        context: path.display().to_string(),
        source,
    })?)
}

fn input_dirs(input: &InputArgs) -> CmdResult<Vec<PathBuf>> {
    let dirs = match (&input.dump, &input.corpus) {
        (Some(d), _) => vec![d.clone()],
        (None, Some(c)) => list_dump_dirs(c)?,
        (None, None) => unreachable!("clap requires one input"),
    };
    if dirs.is_empty() {
        return Err(Error::Empty("no dump directories found").into());
    }
    Ok(dirs)
}

fn build_policy(args: &PolicyArgs, n_heads: usize) -> HeadPolicy {
    match args.policy {
        PolicyKind::Fixed => HeadPolicy::Fixed {
            layers: args.layers.clone(),
            per_layer: args.per_layer.unwrap_or(n_heads / 2),
        },
        PolicyKind::Top => HeadPolicy::TopOas { count: args.count },
    }
}

#[derive(Serialize)]
struct InspectReport {
    utterance_id: String,
    dtype: &'static str,
    n_layers: usize,
    n_heads: usize,
    seq_len: usize,
    text_span: [usize; 2],
    speech_span: [usize; 2],
    sliced: bool,
    matrix_shape: [usize; 2],
    row_sums: Vec<oas_align::store::RowSumRange>,
}

fn inspect(dir: &Path) -> CmdResult {
    let dump = load_dump(dir)?;
    let meta = dump.meta().clone();
    let (r, c) = meta.matrix_shape();
    let row_sums = match &dump {
        AnyDump::F32(d) => row_sum_ranges(d),
        AnyDump::F64(d) => row_sum_ranges(d),
    };
    let (t, s) = (meta.layout.text_span(), meta.layout.speech_span());
    let report = InspectReport {
        utterance_id: meta.utterance_id,
        dtype: dump.dtype().as_str(),
        n_layers: meta.n_layers,
        n_heads: meta.n_heads,
        seq_len: meta.layout.seq_len(),
        text_span: [t.start, t.end],
        speech_span: [s.start, s.end],
        sliced: meta.sliced,
        matrix_shape: [r, c],
        row_sums,
    };
    print!("{}", pretty(&report)?);
    Ok(())
}

fn oas_cmd(args: OasArgs) -> CmdResult {
    let dirs = input_dirs(&args.input)?;
    let tables = corpus_oas_tables(&dirs, args.jobs)?;
    let report = oas_report(&tables, args.k_layer, args.k_final)?;
    write_file(&args.out, &pretty(&report)?)?;
    if let Some(p) = &args.per_utt_out {
        write_file(p, &to_jsonl(&utterance_summaries(&tables, args.k_final)?)?)?;
    }
    println!(
        "final_oas {} over {} utterance(s)",
        report.final_oas, report.n_utts
    );
    Ok(())
}

fn select_heads(args: SelectArgs) -> CmdResult {
    let report: OasReport = read_json(&args.report)?;
    let table = report.table()?;
    let set = select_alignment_heads(&table, &build_policy(&args.policy, table.n_heads()))?;
    write_file(&args.out, &pretty(&set)?)?;
    println!("{} head(s) selected", set.len());
    Ok(())
}

#[derive(Serialize)]
struct PathRecord<'a> {
    utterance_id: &'a str,
    layer: usize,
    head: usize,
    path: &'a [usize],
    durations: &'a [usize],
}

fn path_cmd(args: PathArgs) -> CmdResult {
    let dump = load_dump(&args.dump)?.into_f64();
    let (layer, head) = match (args.layer, args.head) {
        (Some(l), Some(h)) => (l, h),
        _ => utterance_oas_table(&dump)?.best_head(),
    };
    let path = optimal_path(dump.alignment(layer, head)?.as_matrix())?;
    let durations = path_to_durations(&path);
    let record = PathRecord {
        utterance_id: dump.utterance_id(),
        layer,
        head,
        path: path.indices(),
        durations: durations.as_slice(),
    };
    write_file(&args.out, &pretty(&record)?)
}

#[derive(Deserialize)]
struct TokenLine {
    utterance_id: String,
    tokens: Vec<u64>,
}

enum TokenSource {
    Single(Vec<u64>),
    ById(BTreeMap<String, Vec<u64>>),
}

impl TokenSource {
    fn read(path: &Path) -> CmdResult<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if text.trim_start().starts_with('[') {
            let tokens = serde_json::from_str(&text).map_err(|source| Error::Json {
                context: path.display().to_string(),
                source,
            })?;
            return Ok(TokenSource::Single(tokens));
        }
        let mut map = BTreeMap::new();
        for line in read_jsonl::<TokenLine>(path)? {
            if map.insert(line.utterance_id.clone(), line.tokens).is_some() {
                return Err(Error::InvalidArgument(format!(
                    "duplicate token record for {:?}",
                    line.utterance_id
                ))
                .into());
            }
        }
        Ok(TokenSource::ById(map))
    }

    fn for_utterance(&self, id: &str) -> CmdResult<TokenSequence> {
        let tokens = match self {
            TokenSource::Single(t) => t.clone(),
            TokenSource::ById(m) => m
                .get(id)
                .cloned()
                .ok_or_else(|| Error::InvalidArgument(format!("no tokens for utterance {id:?}")))?,
        };
        Ok(TokenSequence::new(tokens)?)
    }
}

fn supervision_record(
    dump: &AttentionDump<f64>,
    tokens: &TokenSource,
    teacher: (usize, usize),
    teacher_oas: f64,
    global_seed: u64,
) -> CmdResult<SupervisionRecord> {
    let id = dump.utterance_id();
    let seed = derive_seed(global_seed, id);
    let t = tokens.for_utterance(id)?;
    let a = dump.alignment(teacher.0, teacher.1)?;
    let bundle =
        build_supervision_from_matrix(&t, &a, seed).map_err(|e| Failure::from(e).context(id))?;
    Ok(SupervisionRecord::new(
        id,
        teacher,
        teacher_oas,
        &bundle,
        seed,
    ))
}

impl Failure {
    fn context(mut self, id: &str) -> Self {
        self.message = format!("utterance {id:?}: {}", self.message);
        self
    }
}

/// Outcome of the first pass over one utterance.
enum Teacher {
    Done(SupervisionRecord),
    /// Own OAS table failed; resolved later from the corpus-level best head.
    Fallback(Failure),
}

fn supervise(args: SuperviseArgs) -> CmdResult {
    let dirs = input_dirs(&args.input)?;
    let tokens = TokenSource::read(&args.tokens)?;
    if matches!(tokens, TokenSource::Single(_)) && dirs.len() > 1 {
        return Err(Error::InvalidArgument(
            "a bare token array needs a single dump; use JSONL records for a corpus".into(),
        )
        .into());
    }
    let seed = args.seed;
    let first: Vec<CmdResult<Teacher>> = with_jobs(args.jobs, || {
        dirs.par_iter()
            .map(|dir| {
                let dump = load_dump(dir)?.into_f64();
                match utterance_oas_table(&dump) {
                    Ok(table) => {
                        let best = table.best_head();
                        let oas = table.get(best.0, best.1);
                        Ok(Teacher::Done(supervision_record(
                            &dump, &tokens, best, oas, seed,
                        )?))
                    }
                    Err(e) if args.fallback_corpus_head => Ok(Teacher::Fallback(e.into())),
                    Err(e) => Err(Failure::from(e).context(dump.utterance_id())),
                }
            })
            .collect()
    })?;

    let mut records = Vec::with_capacity(first.len());
    let mut pending = Vec::new();
    for (k, item) in first.into_iter().enumerate() {
        match item? {
            Teacher::Done(rec) => records.push(Some(rec)),
            Teacher::Fallback(why) => {
                warn!(
                    "{}: {}; using the corpus-level best head",
                    dirs[k].display(),
                    why.message
                );
                pending.push(k);
                records.push(None);
            }
        }
    }
    let records = fill_fallbacks(records, &pending, &dirs, &tokens, seed, args.jobs)?;
    write_file(&args.out, &to_jsonl(&records)?)?;
    println!("{} supervision record(s)", records.len());
    Ok(())
}

/// Resolves utterances whose own OAS table failed, using the best head of the
/// mean table over every utterance that succeeded.
fn fill_fallbacks(
    mut records: Vec<Option<SupervisionRecord>>,
    pending: &[usize],
    dirs: &[PathBuf],
    tokens: &TokenSource,
    seed: u64,
    jobs: usize,
) -> CmdResult<Vec<SupervisionRecord>> {
    if !pending.is_empty() {
        let healthy: Vec<PathBuf> = records
            .iter()
            .zip(dirs)
            .filter(|(r, _)| r.is_some())
            .map(|(_, d)| d.clone())
            .collect();
        if healthy.is_empty() {
            return Err(Error::InvalidArgument(
                "no utterance has a computable OAS table to fall back on".into(),
            )
            .into());
        }
        let mut acc = OasAccumulator::new();
        for (_, t) in corpus_oas_tables(&healthy, jobs)? {
            acc.add(&t)?;
        }
        let best = acc.mean()?.best_head();
        for &k in pending {
            let dump = load_dump(&dirs[k])?.into_f64();
            let a = dump.alignment(best.0, best.1)?;
            let teacher_oas = oas(&a).map_err(|e| Failure::from(e).context(dump.utterance_id()))?;
            records[k] = Some(supervision_record(&dump, tokens, best, teacher_oas, seed)?);
        }
    }
    Ok(records
        .into_iter()
        .map(|r| r.expect("every slot filled"))
        .collect())
}

#[derive(Serialize)]
struct HeadLoss {
    layer: usize,
    head: usize,
    oas: f64,
    loss: f64,
    grad_norm: f64,
}

#[derive(Serialize)]
struct LossReport {
    utterance_id: String,
    floor: Option<f64>,
    heads: Vec<HeadLoss>,
    mean_loss: f64,
}

fn loss(args: LossArgs) -> CmdResult {
    let dump = load_dump(&args.dump)?.into_f64();
    let table = utterance_oas_table(&dump)?;
    let set: HeadSet = match &args.heads {
        Some(p) => read_json(p)?,
        None => select_alignment_heads(&table, &build_policy(&args.policy, table.n_heads()))?,
    };
    if set.is_empty() {
        return Err(Error::Empty("no designated heads").into());
    }
    let opts = OasLossOptions { floor: args.floor };
    let mut heads = Vec::with_capacity(set.len());
    for &(layer, head) in &set.heads {
        let a = dump.alignment(layer, head)?;
        let l = oas_loss_with(&a, &opts)?;
        let g = oas_loss_grad_wrt_a_with(&a, &l.path, &opts)?;
        heads.push(HeadLoss {
            layer,
            head,
            oas: table.get(layer, head),
            loss: l.loss,
            grad_norm: g.norm(),
        });
    }
    let mean_loss = heads.iter().map(|h| h.loss).sum::<f64>() / heads.len() as f64;
    let report = LossReport {
        utterance_id: dump.utterance_id().to_string(),
        floor: args.floor,
        heads,
        mean_loss,
    };
    write_file(&args.out, &pretty(&report)?)?;
    println!("mean loss {mean_loss} over {} head(s)", set.len());
    Ok(())
}

#[derive(Deserialize)]
struct OasLine {
    utterance_id: String,
    final_oas: f64,
}

fn corr(args: CorrArgs) -> CmdResult {
    let pairs: Vec<(String, f64)> = match (&args.oas, &args.corpus) {
        (Some(p), _) => read_jsonl::<OasLine>(p)?
            .into_iter()
            .map(|l| (l.utterance_id, l.final_oas))
            .collect(),
        (None, Some(c)) => {
            let tables = corpus_oas_tables(&list_dump_dirs(c)?, args.jobs)?;
            utterance_summaries(&tables, args.k_final)?
                .into_iter()
                .map(|u| (u.utterance_id, u.final_oas))
                .collect()
        }
        (None, None) => unreachable!("clap requires --oas or --corpus"),
    };
    let wer_path = match (&args.wer, &args.corpus) {
        (Some(w), _) => w.clone(),
        (None, Some(c)) => c.join(WER_FILE),
        (None, None) => unreachable!("clap requires --wer without --corpus"),
    };
    let wer: Vec<WerEntry> = read_jsonl(&wer_path)?;
    let (records, unmatched) = join_by_id(&pairs, &wer)?;
    if !unmatched.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{} utterance id(s) lack OAS or WER, first {:?}",
            unmatched.len(),
            unmatched[0]
        ))
        .into());
    }
    let report = oas_wer_report(&records)?;
    write_file(&args.out_dir.join("scatter.tsv"), &report.scatter_tsv())?;
    write_file(&args.out_dir.join("corr_report.json"), &report.corr_json())?;
    println!("r {} over {} utterance(s)", report.corr.r, report.corr.n);
    Ok(())
}

fn synth(args: SynthArgs) -> CmdResult {
    let template = CorpusTemplate {
        speech_len: args.speech_len,
        text_len: args.text_len,
        path_style: args.path_style.into(),
        n_layers: args.n_layers,
        n_heads: args.n_heads,
        planted_heads: args
            .planted_layers
            .iter()
            .flat_map(|&l| (0..args.planted_per_layer).map(move |h| (l, h)))
            .collect(),
        jitter: args.jitter,
        noise: args.noise,
    };
    let wer_model = WerModel {
        base: args.wer_base,
        slope: args.wer_slope,
        sigma: args.wer_sigma,
    };
    write_synthetic_corpus(
        &args.out,
        &template,
        args.n_utts,
        &wer_model,
        args.seed,
        args.jobs,
    )?;
    println!("{} utterance(s) in {}", args.n_utts, args.out.display());
    Ok(())
}

fn selfcheck(seed: u64) -> CmdResult {
    let reports = run_all(seed)?;
    let mut failed = Vec::new();
    for r in &reports {
        let status = if r.passed() { "PASS" } else { "FAIL" };
        println!(
            "{status}  {}: {} instances, max error {:e}, tolerance {:e}",
            r.name, r.instances, r.max_error, r.tolerance
        );
        if !r.passed() {
            failed.push(r.name);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure {
            kind: "selfcheck_failed",
            message: format!("failing suites: {}", failed.join(", ")),
        })
    }
}
