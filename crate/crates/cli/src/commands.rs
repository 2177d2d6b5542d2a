use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use jointneg::analysis::{emit_figure_data, FigurePoint};
use jointneg::checkpoint::Checkpoint;
use jointneg::corpus::{generate_synthetic, load_qrels};
use jointneg::eval::{format_metrics, format_run, load_run, Metric, Qrels, RunList};
use jointneg::lab::{parse_generator_set, ranker_name, Lab, RETRIEVER_SPECS};
use jointneg::retrievers::{InvertedIndex, RetrieverModel};
use jointneg::Ranker;

use crate::data::Dataset;
use crate::settings::Settings;

pub const RUN_TAG: &str = "jointneg";

pub fn checkpoint_path(models: &Path, name: &str) -> PathBuf {
    models.join(format!("{name}.ckpt"))
}

pub fn report_path(models: &Path, name: &str) -> PathBuf {
    models.join(format!("{name}.loss.tsv"))
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

pub fn save_retriever(
    models: &Path,
    name: &str,
    model: &RetrieverModel<f64>,
) -> anyhow::Result<()> {
    fs::create_dir_all(models)?;
    Checkpoint::from(model).save(checkpoint_path(models, name))?;
    Ok(())
}

pub fn save_ranker(models: &Path, name: &str, model: &Ranker) -> anyhow::Result<()> {
    fs::create_dir_all(models)?;
    Checkpoint::from(model).save(checkpoint_path(models, name))?;
    Ok(())
}

pub fn load_retriever(models: &Path, name: &str) -> anyhow::Result<RetrieverModel<f64>> {
    let path = checkpoint_path(models, name);
    let ckpt = Checkpoint::load(&path).with_context(|| format!("loading {}", path.display()))?;
    Ok(RetrieverModel::try_from(&ckpt)?)
}

pub fn load_ranker(models: &Path, name: &str) -> anyhow::Result<Ranker> {
    let path = checkpoint_path(models, name);
    let ckpt = Checkpoint::load(&path).with_context(|| format!("loading {}", path.display()))?;
    Ok(Ranker::try_from(&ckpt)?)
}

/// Loads every checkpoint found in `models` into the lab.
pub fn load_models(lab: &mut Lab, models: &Path) -> anyhow::Result<()> {
    let Ok(entries) = fs::read_dir(models) else {
        return Ok(());
    };
    let mut names: Vec<String> = entries
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            e.file_name()
                .to_str()
                .and_then(|n| n.strip_suffix(".ckpt"))
                .map(str::to_string)
        })
        .collect();
    names.sort();
    for name in names {
        if name.starts_with("ranker-") {
            let model = load_ranker(models, &name)?;
            lab.rankers.insert(name, model);
        } else {
            let model = load_retriever(models, &name)?;
            lab.retrievers.insert(name, model);
        }
    }
    Ok(())
}

fn open_lab(settings: &Settings, data: &Path, models: Option<&Path>) -> anyhow::Result<Lab> {
    let mut lab = Dataset::load(data)?.lab(settings.lab.clone(), None)?;
    if let Some(models) = models {
        load_models(&mut lab, models)?;
    }
    Ok(lab)
}

pub fn synth(settings: &Settings, out: &Path) -> anyhow::Result<()> {
    let corpus = generate_synthetic(&settings.synth)?;
    let files = Dataset::from_synthetic(corpus, settings.n_train).write(out)?;
    for f in files {
        println!("{}", f.display());
    }
    Ok(())
}

pub fn index(data: &Path, out: &Path) -> anyhow::Result<()> {
    let collection = Dataset::load(data)?.collection;
    let index = InvertedIndex::build(&collection)?;
    write_file(out, index.to_text())?;
    println!(
        "{} documents, {} terms, avgdl {:.4}",
        index.n_docs(),
        index.n_terms(),
        index.avgdl()
    );
    Ok(())
}

pub fn train_retriever(
    settings: &Settings,
    data: &Path,
    models: &Path,
    name: &str,
) -> anyhow::Result<()> {
    if !RETRIEVER_SPECS.iter().any(|s| s.name == name) {
        bail!(
            "unknown retriever `{name}`; expected one of {}",
            RETRIEVER_SPECS.map(|s| s.name).join(", ")
        );
    }
    let mut lab = open_lab(settings, data, Some(models))?;
    let report = lab.train_generator(name)?;
    save_retriever(models, name, &lab.retrievers[name])?;
    write_file(&report_path(models, name), report.to_text())?;
    println!("{}", checkpoint_path(models, name).display());
    Ok(())
}

pub fn train_ranker(
    settings: &Settings,
    data: &Path,
    models: &Path,
    generators: &str,
) -> anyhow::Result<()> {
    let set = parse_generator_set(generators)?;
    let mut lab = open_lab(settings, data, Some(models))?;
    let (name, report) = lab.train_ranker(&set)?;
    save_ranker(models, &name, &lab.rankers[&name])?;
    write_file(&report_path(models, &name), report.to_text())?;
    println!("{}", checkpoint_path(models, &name).display());
    Ok(())
}

pub fn distill(
    settings: &Settings,
    data: &Path,
    models: &Path,
    student: &str,
    teacher: &str,
    output: &str,
) -> anyhow::Result<()> {
    let teacher = ranker_name(&parse_generator_set(teacher)?);
    let mut lab = open_lab(settings, data, Some(models))?;
    let report = lab.distill(student, &teacher, output)?;
    save_retriever(models, output, &lab.retrievers[output])?;
    let mut losses = report.losses.clone();
    losses
        .metrics
        .insert("kl_initial".into(), report.initial_kl);
    losses.metrics.insert("kl_final".into(), report.final_kl);
    write_file(&report_path(models, output), losses.to_text())?;
    println!(
        "kl {:.6} -> {:.6} ({} queries skipped)",
        report.initial_kl, report.final_kl, report.skipped
    );
    Ok(())
}

pub fn rerank(
    settings: &Settings,
    data: &Path,
    models: &Path,
    generators: &str,
    out: &Path,
) -> anyhow::Result<()> {
    let ranker = ranker_name(&parse_generator_set(generators)?);
    let lab = open_lab(settings, data, Some(models))?;
    let runs = lab.bm25_rerank_runs(&ranker)?;
    write_file(out, format_run(&runs, RUN_TAG))?;
    print!("{}", format_metrics(&lab.metrics(&runs)));
    Ok(())
}

pub fn full_rank(
    settings: &Settings,
    data: &Path,
    models: &Path,
    retriever: &str,
    generators: &str,
    out: &Path,
) -> anyhow::Result<()> {
    let ranker = ranker_name(&parse_generator_set(generators)?);
    let lab = open_lab(settings, data, Some(models))?;
    let runs = lab.full_rank_runs(retriever, &ranker)?;
    write_file(out, format_run(&runs, RUN_TAG))?;
    print!("{}", format_metrics(&lab.metrics(&runs)));
    Ok(())
}

/// Every metric at every depth, in `mrr, recall, ndcg` order.
pub fn metric_table(
    runs: &[RunList<f64>],
    qrels: &Qrels,
    ks: &[usize],
) -> Vec<(Metric, usize, f64)> {
    [Metric::Mrr, Metric::Recall, Metric::Ndcg]
        .into_iter()
        .flat_map(|m| ks.iter().map(move |&k| (m, k, m.compute(runs, qrels, k))))
        .collect()
}

pub fn eval(run: &Path, qrels: &Path, ks: &[usize]) -> anyhow::Result<String> {
    let runs = load_run(run).with_context(|| format!("reading run {}", run.display()))?;
    let judgments =
        load_qrels(qrels).with_context(|| format!("reading qrels {}", qrels.display()))?;
    if runs.is_empty() {
        log::warn!("run file {} is empty", run.display());
    }
    Ok(format_metrics(&metric_table(
        &runs,
        &Qrels::new(&judgments),
        ks,
    )))
}

/// Shift and KL summaries of each ranker against its generator set, plus
/// the two scatter files.
pub fn analysis(lab: &Lab, sets: &[Vec<String>], out: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut summary = String::new();
    let mut kl_points = Vec::new();
    let mut shift_points = Vec::new();
    for set in sets {
        let name = ranker_name(set);
        let mrr = lab.mrr10(&lab.bm25_rerank_runs(&name)?);
        let s = lab.shift(set, &name)?;
        let label = set.join("+");
        summary.push_str(&format!(
            "{label}.kl_generators_to_bm25\t{}\n{label}.kl_ranker_to_bm25\t{}\n{label}.delta\t{}\n{label}.abs_delta\t{}\n{label}.rerank_mrr@10\t{}\n",
            s.kl_generators, s.kl_ranker, s.delta, s.abs_delta, mrr
        ));
        kl_points.push(FigurePoint {
            label: label.clone(),
            x: s.kl_generators,
            y: mrr,
        });
        shift_points.push(FigurePoint {
            label,
            x: s.abs_delta,
            y: mrr,
        });
    }
    fs::create_dir_all(out)?;
    let files = vec![
        out.join("summary.tsv"),
        out.join("kl_vs_mrr.tsv"),
        out.join("shift_vs_mrr.tsv"),
    ];
    let header = "# distributions: softmax of scores on the union of top-N supports\n";
    write_file(&files[0], format!("{header}{summary}"))?;
    emit_figure_data(&kl_points, &files[1])?;
    emit_figure_data(&shift_points, &files[2])?;
    Ok(files)
}

pub fn analyze(
    settings: &Settings,
    data: &Path,
    models: &Path,
    generator_sets: &[String],
    out: &Path,
) -> anyhow::Result<()> {
    let sets = if generator_sets.is_empty() {
        settings.generator_sets.clone()
    } else {
        generator_sets
            .iter()
            .map(|s| parse_generator_set(s))
            .collect::<jointneg::Result<Vec<_>>>()?
    };
    let lab = open_lab(settings, data, Some(models))?;
    for f in analysis(&lab, &sets, out)? {
        println!("{}", f.display());
    }
    Ok(())
}
