//! End-to-end run with resumable stages.
//!
//! Every stage has a fingerprint chained from the settings snapshot, the
//! input data and the stages before it. A stage is skipped when its
//! `stages/NAME.done` record carries the same fingerprint and every output
//! it lists still hashes to the recorded digest.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use jointneg::corpus::generate_synthetic;
use jointneg::eval::{format_run, RunList};
use jointneg::lab::{ranker_name, BM25, RETRIEVER_SPECS};
use jointneg::retrievers::InvertedIndex;
use sha2::{Digest, Sha256};

use crate::commands::{
    analysis, checkpoint_path, load_ranker, load_retriever, report_path, save_ranker,
    save_retriever, write_file, RUN_TAG,
};
use crate::data::{Dataset, FILES};
use crate::settings::Settings;

pub const MANIFEST: &str = "manifest.tsv";
pub const TIMING: &str = "timing.tsv";
const STAGES: &str = "stages";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn file_digest(path: &Path) -> anyhow::Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

/// `den_hn` → `den_distilled`.
pub fn distilled_name(student: &str) -> String {
    let family = student.split('_').next().unwrap_or(student);
    format!("{family}_distilled")
}

struct Tracker {
    out: PathBuf,
    chain: String,
    timing: Vec<(String, &'static str, f64)>,
    started: Option<Instant>,
}

impl Tracker {
    fn done_path(&self, name: &str) -> PathBuf {
        self.out.join(STAGES).join(format!("{name}.done"))
    }

    /// Advances the fingerprint chain and reports whether `name` must run.
    fn begin(&mut self, name: &str, outputs: &[String]) -> anyhow::Result<bool> {
        self.chain = sha256_hex(format!("{}\n{name}", self.chain).as_bytes());
        let fresh = match fs::read_to_string(self.done_path(name)) {
            Ok(text) => !self.is_current(&text, outputs),
            Err(_) => true,
        };
        if fresh {
            log::info!("stage {name}: running");
            self.started = Some(Instant::now());
        } else {
            log::info!("stage {name}: up to date");
            self.timing.push((name.to_string(), "skipped", 0.0));
        }
        Ok(fresh)
    }

    fn is_current(&self, record: &str, outputs: &[String]) -> bool {
        let mut lines = record.lines();
        if lines.next() != Some(&format!("fingerprint\t{}", self.chain)) {
            return false;
        }
        let recorded: BTreeMap<&str, &str> = lines.filter_map(|l| l.split_once('\t')).collect();
        outputs.iter().all(|rel| {
            recorded
                .get(rel.as_str())
                .is_some_and(|want| file_digest(&self.out.join(rel)).is_ok_and(|got| &got == want))
        })
    }

    fn finish(&mut self, name: &str, outputs: &[String]) -> anyhow::Result<()> {
        let mut record = format!("fingerprint\t{}\n", self.chain);
        for rel in outputs {
            let _ = writeln!(record, "{rel}\t{}", file_digest(&self.out.join(rel))?);
        }
        write_file(&self.done_path(name), record)?;
        let secs = self
            .started
            .take()
            .map_or(0.0, |t| t.elapsed().as_secs_f64());
        self.timing.push((name.to_string(), "ran", secs));
        Ok(())
    }
}

fn rel(path: &Path, out: &Path) -> String {
    path.strip_prefix(out)
        .unwrap_or(path)
        .to_string_lossy()
        .replace('\\', "/")
}

fn model_outputs(name: &str) -> Vec<String> {
    let models = Path::new("models");
    vec![
        rel(&checkpoint_path(models, name), Path::new("")),
        rel(&report_path(models, name), Path::new("")),
    ]
}

/// Every file under `dir`, relative to it and sorted.
fn list_files(dir: &Path, base: &Path, acc: &mut Vec<String>) -> anyhow::Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            list_files(&path, base, acc)?;
        } else {
            acc.push(rel(&path, base));
        }
    }
    Ok(())
}

fn write_runs(path: &Path, runs: &[RunList<f64>]) -> anyhow::Result<()> {
    write_file(path, format_run(runs, RUN_TAG))
}

/// Runs every stage into `out`. Data comes from `data` or, when absent, is
/// synthesised into `out/data`.
pub fn run(settings: &Settings, data: Option<&Path>, out: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let snapshot = settings.to_text();
    let mut tracker = Tracker {
        out: out.to_path_buf(),
        chain: sha256_hex(snapshot.as_bytes()),
        timing: Vec::new(),
        started: None,
    };
    write_file(&out.join("config.txt"), &snapshot)?;

    let data_dir = match data {
        Some(dir) => dir.to_path_buf(),
        None => {
            let dir = out.join("data");
            let outputs: Vec<String> = FILES.iter().map(|f| format!("data/{f}")).collect();
            if tracker.begin("data", &outputs)? {
                let corpus = generate_synthetic(&settings.synth)?;
                Dataset::from_synthetic(corpus, settings.n_train).write(&dir)?;
                tracker.finish("data", &outputs)?;
            }
            dir
        }
    };
    let mut inputs = Vec::new();
    for f in FILES {
        let path = data_dir.join(f);
        let shown = match data {
            Some(_) => path.display().to_string(),
            None => rel(&path, out),
        };
        inputs.push((shown, file_digest(&path)?));
    }
    for (_, digest) in &inputs {
        tracker.chain = sha256_hex(format!("{}\n{digest}", tracker.chain).as_bytes());
    }
    let dataset = Dataset::load(&data_dir)?;

    let index_out = vec!["index.txt".to_string()];
    let index = if tracker.begin("index", &index_out)? {
        let index = InvertedIndex::build(&dataset.collection)?;
        write_file(&out.join("index.txt"), index.to_text())?;
        tracker.finish("index", &index_out)?;
        index
    } else {
        InvertedIndex::from_text(&fs::read_to_string(out.join("index.txt"))?)?
    };
    let mut lab = dataset.lab(settings.lab.clone(), Some(index))?;
    let models = out.join("models");

    for spec in &RETRIEVER_SPECS {
        let outputs = model_outputs(spec.name);
        if tracker.begin(spec.name, &outputs)? {
            let report = lab.train_generator(spec.name)?;
            save_retriever(&models, spec.name, &lab.retrievers[spec.name])?;
            write_file(&report_path(&models, spec.name), report.to_text())?;
            tracker.finish(spec.name, &outputs)?;
        } else {
            let model = load_retriever(&models, spec.name)?;
            lab.retrievers.insert(spec.name.to_string(), model);
        }
    }

    let rankers: Vec<String> = settings
        .generator_sets
        .iter()
        .map(|s| ranker_name(s))
        .collect();
    for (set, name) in settings.generator_sets.iter().zip(&rankers) {
        let outputs = model_outputs(name);
        if tracker.begin(name, &outputs)? {
            let (trained, report) = lab.train_ranker(set)?;
            save_ranker(&models, &trained, &lab.rankers[&trained])?;
            write_file(&report_path(&models, &trained), report.to_text())?;
            tracker.finish(name, &outputs)?;
        } else {
            let model = load_ranker(&models, name)?;
            lab.rankers.insert(name.clone(), model);
        }
    }

    let student = settings.distill_student.as_str();
    let distilled = distilled_name(student);
    let teacher = rankers.last().context("no generator sets configured")?;
    let outputs = model_outputs(&distilled);
    if tracker.begin("distill", &outputs)? {
        let report = lab.distill(student, teacher, &distilled)?;
        save_retriever(&models, &distilled, &lab.retrievers[&distilled])?;
        let mut losses = report.losses.clone();
        losses
            .metrics
            .insert("kl_initial".into(), report.initial_kl);
        losses.metrics.insert("kl_final".into(), report.final_kl);
        write_file(&report_path(&models, &distilled), losses.to_text())?;
        tracker.finish("distill", &outputs)?;
    } else {
        let model = load_retriever(&models, &distilled)?;
        lab.retrievers.insert(distilled.clone(), model);
    }

    let mut run_names: Vec<String> = vec![BM25.to_string()];
    run_names.extend(RETRIEVER_SPECS.iter().map(|s| s.name.to_string()));
    run_names.push(distilled.clone());
    let rerank_names: Vec<String> = rankers.iter().map(|r| format!("rerank.{r}")).collect();
    let full_names: Vec<(String, String)> = [student.to_string(), distilled.clone()]
        .into_iter()
        .map(|r| (r.clone(), format!("full.{r}.{teacher}")))
        .collect();
    let mut outputs: Vec<String> = run_names
        .iter()
        .chain(&rerank_names)
        .chain(full_names.iter().map(|(_, n)| n))
        .map(|n| format!("runs/{n}.run"))
        .collect();
    outputs.push("metrics.tsv".to_string());
    if tracker.begin("evaluate", &outputs)? {
        let mut metrics = String::from("run\tmetric\tvalue\n");
        let mut record = |name: &str, runs: &[RunList<f64>]| -> anyhow::Result<()> {
            write_runs(&out.join(format!("runs/{name}.run")), runs)?;
            for (m, k, v) in lab.metrics(runs) {
                let _ = writeln!(metrics, "{name}\t{}@{k}\t{v}", m.name());
            }
            Ok(())
        };
        for name in &run_names {
            let depth = if name == BM25 {
                lab.config.rerank_depth
            } else {
                lab.config.full_rank_depth
            };
            record(name, &lab.retrieval_runs(name, depth)?)?;
        }
        for (ranker, name) in rankers.iter().zip(&rerank_names) {
            record(name, &lab.bm25_rerank_runs(ranker)?)?;
        }
        for (retriever, name) in &full_names {
            record(name, &lab.full_rank_runs(retriever, teacher)?)?;
        }
        write_file(&out.join("metrics.tsv"), metrics)?;
        tracker.finish("evaluate", &outputs)?;
    }

    let analysis_dir = out.join("analysis");
    let outputs: Vec<String> = ["summary.tsv", "kl_vs_mrr.tsv", "shift_vs_mrr.tsv"]
        .iter()
        .map(|f| format!("analysis/{f}"))
        .collect();
    if tracker.begin("analyze", &outputs)? {
        analysis(&lab, &settings.generator_sets, &analysis_dir)?;
        tracker.finish("analyze", &outputs)?;
    }

    write_manifest(out, settings, &inputs)?;
    let mut timing = String::from("stage\tstatus\tseconds\n");
    for (stage, status, secs) in &tracker.timing {
        let _ = writeln!(timing, "{stage}\t{status}\t{secs:.3}");
    }
    write_file(&out.join(TIMING), timing)?;
    println!("{}", out.join(MANIFEST).display());
    Ok(())
}

/// Seed, settings, input digests and the digest of every artifact. Wall-clock
/// times live in the timing file so the manifest stays reproducible.
fn write_manifest(
    out: &Path,
    settings: &Settings,
    inputs: &[(String, String)],
) -> anyhow::Result<()> {
    let mut text = String::from("# jointneg pipeline manifest\n");
    let _ = writeln!(text, "version\t{}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(text, "seed\t{}", settings.lab.seed);
    for (k, v) in settings.to_kv() {
        let _ = writeln!(text, "config\t{k}\t{v}");
    }
    for (path, digest) in inputs {
        let _ = writeln!(text, "input\t{path}\t{digest}");
    }
    let mut files = Vec::new();
    list_files(out, out, &mut files)?;
    files.retain(|f| f != MANIFEST && f != TIMING && !f.starts_with(&format!("{STAGES}/")));
    files.sort();
    for f in files {
        let _ = writeln!(text, "artifact\t{f}\t{}", file_digest(&out.join(&f))?);
    }
    write_file(&out.join(MANIFEST), text)
}
