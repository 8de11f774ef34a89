use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use hpd_core::engine::DecodeConfig;
use hpd_core::masks::{inference_mask, training_mask};
use hpd_core::model::{Backend, ModelConfig, ScriptedBackend, ScriptedCompute, TinyModel, ValueScript};
use hpd_core::scheduler::{LayoutShape, StackedPrompt, Template, DEFAULT_INSTRUCTION};
use hpd_harness::bench::{bench_sweep, write_csv, BenchSpec};
use hpd_harness::dataset::{attribute_sets, gold_labels, load_jsonl, load_results, save_jsonl, save_results, TraceSummary};
use hpd_harness::metrics::{exact_f1, judge_f1, match_counts, JudgeCounts};
use hpd_harness::pipeline::{extract, Mode};
use hpd_harness::synth::{script_from_labels, synth_corpus, SynthConfig};
use hpd_harness::verify;
use indexmap::IndexMap;

#[derive(Parser)]
#[command(name = "hpd", about = "Parallel attribute-value extraction with a toy decoder")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Ar,
    Hpd,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Ar => Mode::Ar,
            ModeArg::Hpd => Mode::Hpd,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    /// Random-weight tiny model.
    Tiny,
    /// Emits the gold labels of the dataset (null as "null").
    Scripted,
    /// Tiny model for timing, gold labels for output.
    ScriptedTiny,
}

#[derive(clap::Args)]
struct Common {
    #[arg(long, value_enum, default_value = "scripted")]
    backend: BackendArg,
    #[arg(long, default_value_t = 30)]
    kmax: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Template file with `@@ section` headers; defaults to the built-in one.
    #[arg(long)]
    template: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Decode a JSONL dataset and write results JSON.
    Extract {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum, default_value = "hpd")]
        mode: ModeArg,
        #[arg(long = "docs-per-prompt", default_value_t = 6)]
        docs_per_prompt: usize,
        #[arg(long, default_value_t = 1)]
        batch: usize,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Sweep documents per prompt and batch size; write CSV.
    Bench {
        /// Dataset to use; a synthetic 16-attribute corpus if omitted.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, default_value_t = 24)]
        products: usize,
        #[arg(long = "sweep-docs", value_delimiter = ',', default_value = "1,2,4,6,8")]
        sweep_docs: Vec<usize>,
        #[arg(long = "sweep-batch", value_delimiter = ',', default_value = "1,2,4")]
        sweep_batch: Vec<usize>,
        #[arg(long)]
        csv: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run every acceptance check; nonzero exit on failure.
    Verify {
        /// Only these criteria (1-10).
        #[arg(long, value_delimiter = ',')]
        only: Vec<u8>,
    },
    /// Exact-match precision/recall/F1 of a results file against gold labels.
    Score {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gold: PathBuf,
    },
    /// Judge-count F1 from `{C, CN, I, M, H}` (one object, or a map of runs).
    JudgeScore {
        #[arg(long)]
        counts: PathBuf,
    },
    /// Write a synthetic JSONL corpus with planted values.
    Synth {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 2)]
        categories: usize,
        #[arg(long, default_value_t = 24)]
        products: usize,
        #[arg(long, default_value_t = 16)]
        attrs: usize,
        #[arg(long, default_value_t = 0.0)]
        absent: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the inference and training masks of a three-slot layout as PBM.
    Masks {
        #[arg(long, default_value_t = 7)]
        kmax: usize,
        /// Gold value length for every slot in the training mask.
        #[arg(long, default_value_t = 3)]
        value_len: usize,
    },
}

fn load_template(path: &Option<PathBuf>) -> Result<Template> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(Template::parse(&text)?)
        }
        None => Ok(Template::default()),
    }
}

fn make_backend(common: &Common, script: ValueScript, template: &Template) -> Result<Box<dyn Backend>> {
    let tiny = || TinyModel::new(ModelConfig::toy(common.seed));
    Ok(match common.backend {
        BackendArg::Tiny => Box::new(tiny()?),
        BackendArg::Scripted => Box::new(ScriptedBackend::new(script, template.clone())),
        BackendArg::ScriptedTiny => Box::new(ScriptedCompute::new(tiny()?, script, template.clone())),
    })
}

fn print_report(label: &str, r: &hpd_harness::metrics::MetricsReport) {
    println!(
        "{label}precision={:.4} recall={:.4} f1={:.4}{}",
        r.precision,
        r.recall,
        r.f1,
        if r.degenerate { " (degenerate)" } else { "" }
    );
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Extract {
            dataset,
            mode,
            docs_per_prompt,
            batch,
            out,
            common,
        } => {
            let records = load_jsonl(&dataset)?;
            let sets = attribute_sets(&records)?;
            let template = load_template(&common.template)?;
            let backend = make_backend(&common, script_from_labels(&records), &template)?;
            let config = DecodeConfig {
                k_max: common.kmax,
                docs_per_prompt,
                batch_size: batch,
                seed: common.seed,
                ..DecodeConfig::default()
            };
            let result = extract(&backend, &template, DEFAULT_INSTRUCTION, &records, &sets, mode.into(), &config)?;
            let trace = TraceSummary::from(&result.trace);
            save_results(&out, &result.predictions, &trace)?;
            println!(
                "{} products in {} prompts: {} forward passes, {} tokens, {:.3}s",
                records.len(),
                result.prompts,
                trace.forward_passes,
                trace.tokens,
                trace.wall_clock_s
            );
            if result.parse_warnings > 0 {
                eprintln!("warning: {} rows could not be recovered from the output", result.parse_warnings);
            }
            Ok(true)
        }
        Command::Bench {
            dataset,
            products,
            sweep_docs,
            sweep_batch,
            csv,
            common,
        } => {
            let (records, sets, script) = match dataset {
                Some(p) => {
                    let records = load_jsonl(&p)?;
                    let sets = attribute_sets(&records)?;
                    let script = script_from_labels(&records);
                    (records, sets, script)
                }
                None => {
                    let c = synth_corpus(&SynthConfig {
                        seed: common.seed,
                        categories: 1,
                        products,
                        ..SynthConfig::default()
                    })?;
                    (c.records, c.attribute_sets, c.script)
                }
            };
            let template = load_template(&common.template)?;
            let backend = make_backend(&common, script, &template)?;
            let spec = BenchSpec {
                records: &records,
                sets: &sets,
                template: &template,
                instruction: DEFAULT_INSTRUCTION,
                docs: sweep_docs,
                batches: sweep_batch,
                modes: vec![Mode::Ar, Mode::Hpd],
                base: DecodeConfig {
                    k_max: common.kmax,
                    seed: common.seed,
                    ..DecodeConfig::default()
                },
            };
            let rows = bench_sweep(&backend, &spec)?;
            let file = fs::File::create(&csv).with_context(|| format!("creating {}", csv.display()))?;
            write_csv(file, &rows)?;
            write_csv(std::io::stdout(), &rows)?;
            Ok(true)
        }
        Command::Verify { only } => {
            let ids: Vec<u8> = if only.is_empty() {
                verify::CRITERIA.iter().map(|c| c.0).collect()
            } else {
                only
            };
            let mut ok = true;
            for id in ids {
                let Some(o) = verify::run(id) else {
                    bail!("no criterion {id}");
                };
                println!("{}", o.line());
                ok &= o.passed;
            }
            Ok(ok)
        }
        Command::Score { pred, gold } => {
            let records = load_jsonl(&gold)?;
            let sets = attribute_sets(&records)?;
            let gold = gold_labels(&records, &sets);
            let (mut predictions, trace) = load_results(&pred)?;
            predictions.retain(|doc, _| gold.contains_key(doc));
            let counts = match_counts(&predictions, &gold)?;
            let report = exact_f1(&predictions, &gold)?;
            println!("tp={} fp={} fn={}", counts.tp, counts.fp, counts.fn_);
            print_report("", &report);
            if let Some(t) = trace {
                println!("forward_passes={} tokens={} wall_clock_s={:.3}", t.forward_passes, t.tokens, t.wall_clock_s);
            }
            Ok(true)
        }
        Command::JudgeScore { counts } => {
            let text = fs::read_to_string(&counts).with_context(|| format!("reading {}", counts.display()))?;
            let value: serde_json::Value = serde_json::from_str(&text)?;
            let runs: IndexMap<String, JudgeCounts> = match serde_json::from_value::<JudgeCounts>(value.clone()) {
                Ok(c) => [("run".to_string(), c)].into_iter().collect(),
                Err(_) => serde_json::from_value(value).context("expected {C, CN, I, M, H} or a map of them")?,
            };
            for (name, c) in &runs {
                print_report(&format!("{name}: "), &judge_f1(c));
            }
            Ok(true)
        }
        Command::Synth {
            seed,
            categories,
            products,
            attrs,
            absent,
            out,
        } => {
            let c = synth_corpus(&SynthConfig {
                seed,
                categories,
                products,
                attrs_per_category: attrs,
                absent_fraction: absent,
            })?;
            save_jsonl(&out, &c.records)?;
            println!("wrote {} records to {}", c.records.len(), out.display());
            Ok(true)
        }
        Command::Masks { kmax, value_len } => {
            let prompt = StackedPrompt::new(LayoutShape::THREE_SLOTS.build(|i| 65 + i as u32)?, kmax)?;
            let positions = &prompt.plan.position_ids;
            println!("# layout inference mask, positions {positions:?}");
            print!("{}", inference_mask(positions, positions, &vec![true; positions.len()]).to_pbm());
            let gold = vec![vec![b'v' as u32; value_len.min(kmax)]; prompt.layout.slots().len()];
            let t = training_mask(&prompt.layout, &prompt.plan, &gold)?;
            println!("# training mask, positions {:?}", t.positions);
            print!("{}", t.mask.to_pbm());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

