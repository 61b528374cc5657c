use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use kgparse::emit::{from_json, to_json, to_ntriples, ExtractionDocument, IriPolicy};
use kgparse::enrich::{enrich_alignments, Enrichment};
use kgparse::eval::{read_records, score_macro_rel, score_micro, Averaging, Dimension, EvalReport};
use kgparse::generate::{Fixture, Generator, HttpGenerator, MockGenerator, RetryPolicy};
use kgparse::grammar::{FACT_PATTERN, GRAMMAR_EBNF};
use kgparse::link::{
    build_store, read_tsv, read_type_assignments, InverseMaps, LinkKind, LinkStore, Normalization,
};
use kgparse::pipeline::{load_corpus, FrequencyReport, Pipeline, PipelineConfig};
use kgparse::rank::ParseMode;
use kgparse::split::RuleSplitter;
use kgparse::{Aggregation, KeyMode, RankConfig};
use log::{error, info, warn};
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

#[derive(Parser)]
#[command(
    name = "kgparse",
    version,
    about = "Generate, rank, link and emit knowledge graph facts"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the extraction pipeline over a corpus.
    Parse(ParseArgs),
    /// Build or query a link store.
    #[command(subcommand)]
    Link(LinkCommand),
    /// Convert extraction JSON lines to another output format.
    Emit {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "nt")]
        format: Format,
        #[arg(long, default_value = "http://example.org/kg/")]
        local_namespace: String,
    },
    /// Score predictions against gold annotations.
    Eval {
        #[arg(long)]
        input: PathBuf,
        /// Print a single dimension as JSON instead of the full table.
        #[arg(long, value_enum)]
        dim: Option<Dim>,
        #[arg(long, value_enum, default_value = "micro")]
        avg: Avg,
    },
    /// Turn id-level alignments into training targets.
    Enrich {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        store: PathBuf,
        /// `entity_id<TAB>type_id` lines.
        #[arg(long)]
        types: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        rejects: PathBuf,
    },
    /// Print the fact grammar and the lenient-scan pattern.
    Grammar,
    /// Frequency tables of types, entities and relations in extraction JSON lines.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 20)]
        top: usize,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args)]
struct ParseArgs {
    /// Text file, directory of .txt files, or .jsonl of {"doc_id","text"}.
    #[arg(long)]
    input: PathBuf,
    /// Link store built with `link build`.
    #[arg(long)]
    store: PathBuf,
    /// Directory for extractions.jsonl or extractions.nt.
    #[arg(long)]
    output: PathBuf,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    #[arg(long, default_value_t = 5)]
    beams: usize,
    /// Replay generations from a fixture file.
    #[arg(
        long,
        conflicts_with = "endpoint",
        required_unless_present = "endpoint"
    )]
    mock: Option<PathBuf>,
    /// Fail sentences missing from the mock fixture instead of giving them no beams.
    #[arg(long, requires = "mock")]
    no_fallback: bool,
    /// Generation service URL (POST).
    #[arg(long)]
    endpoint: Option<String>,
    /// Per-request timeout in seconds.
    #[arg(long, default_value_t = 120)]
    timeout: u64,
    /// Drop whole hypotheses that do not parse strictly.
    #[arg(long)]
    strict: bool,
    #[arg(long, value_enum, default_value = "sum-raw")]
    aggregation: Agg,
    #[arg(long, value_enum, default_value = "full")]
    dedup: Dedup,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 256)]
    max_length: usize,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Write the run summary as JSON here.
    #[arg(long)]
    summary: Option<PathBuf>,
    #[arg(long, default_value = "http://example.org/kg/")]
    local_namespace: String,
}

#[derive(Subcommand)]
enum LinkCommand {
    /// Ingest `kind<TAB>label<TAB>id` lines into a fresh store.
    Build {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        case_insensitive: bool,
    },
    /// Print the id for a label, or `null`.
    Lookup {
        #[arg(long)]
        store: PathBuf,
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long)]
        label: String,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Nt,
}

#[derive(Clone, Copy, ValueEnum)]
enum Agg {
    SumRaw,
    #[value(name = "sum-prob", alias = "sum-exp-negative")]
    SumExpNegative,
}

#[derive(Clone, Copy, ValueEnum)]
enum Dedup {
    Full,
    Triple,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Entity,
    Type,
    Relation,
}

#[derive(Clone, Copy, ValueEnum)]
enum Dim {
    Md,
    Type,
    El,
    Rn,
    Rel,
}

#[derive(Clone, Copy, ValueEnum)]
enum Avg {
    Micro,
    Macro,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            error!("{e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Parse(args) => parse(args),
        Command::Link(LinkCommand::Build {
            input,
            store,
            case_insensitive,
        }) => {
            let reader = open(&input)?;
            let (_, report) =
                build_store(read_tsv(reader), &store, Normalization { case_insensitive })
                    .with_context(|| format!("building {}", store.display()))?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(0)
        }
        Command::Link(LinkCommand::Lookup { store, kind, label }) => {
            let store = LinkStore::open(&store)?;
            let kind = match kind {
                Kind::Entity => LinkKind::Entity,
                Kind::Type => LinkKind::Type,
                Kind::Relation => LinkKind::Relation,
            };
            println!(
                "{}",
                store.lookup(kind, &label)?.as_deref().unwrap_or("null")
            );
            Ok(0)
        }
        Command::Emit {
            input,
            format,
            local_namespace,
        } => {
            let policy = policy(&local_namespace)?;
            let mut out = BufWriter::new(io::stdout().lock());
            for doc in read_extractions(&input)? {
                write_doc(&mut out, &doc?, format, &policy)?;
            }
            out.flush()?;
            Ok(0)
        }
        Command::Eval { input, dim, avg } => {
            let records = read_records(open(&input)?)?;
            let Some(dim) = dim else {
                print!("{}", EvalReport::compute(&records)?.table());
                return Ok(0);
            };
            let dim = match dim {
                Dim::Md => Dimension::Md,
                Dim::Type => Dimension::Type,
                Dim::El => Dimension::El,
                Dim::Rn => Dimension::Rn,
                Dim::Rel => Dimension::Rel,
            };
            let avg = match avg {
                Avg::Micro => Averaging::Micro,
                Avg::Macro => Averaging::Macro,
            };
            let prf = match (avg, dim) {
                (Averaging::Micro, d) => score_micro(&records, d)?,
                (Averaging::Macro, Dimension::Rel) => score_macro_rel(&records)?,
                (Averaging::Macro, _) => bail!("macro averaging is only defined for REL"),
            };
            println!("{}", serde_json::to_string(&prf)?);
            Ok(0)
        }
        Command::Enrich {
            input,
            store,
            types,
            output,
            rejects,
        } => enrich(&input, &store, &types, &output, &rejects),
        Command::Grammar => {
            println!("{GRAMMAR_EBNF}");
            println!("lenient scan pattern:\n{FACT_PATTERN}");
            Ok(0)
        }
        Command::Report { input, top, json } => {
            let docs = read_extractions(&input)?.collect::<Result<Vec<_>>>()?;
            let report = FrequencyReport::compute(&docs);
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                print!("{}", report.render(top));
            }
            Ok(0)
        }
    }
}

fn parse(args: ParseArgs) -> Result<u8> {
    let store = LinkStore::open(&args.store)
        .with_context(|| format!("opening link store {}", args.store.display()))?;
    let policy = policy(&args.local_namespace)?;
    let generator: Box<dyn Generator> = match (&args.mock, &args.endpoint) {
        (Some(path), _) => {
            let mut m = MockGenerator::new(Fixture::load(path)?);
            m.fallback_empty = !args.no_fallback;
            Box::new(m)
        }
        (None, Some(url)) => Box::new(HttpGenerator::new(
            url.clone(),
            RetryPolicy {
                timeout: Duration::from_secs(args.timeout),
                ..RetryPolicy::default()
            },
        )),
        (None, None) => bail!("one of --mock or --endpoint is required"),
    };
    let cfg = PipelineConfig {
        num_beams: args.beams,
        max_length: args.max_length,
        batch_size: args.batch_size,
        workers: args.workers,
        rank: RankConfig {
            key_mode: match args.dedup {
                Dedup::Full => KeyMode::Full,
                Dedup::Triple => KeyMode::TripleOnly,
            },
            aggregation: match args.aggregation {
                Agg::SumRaw => Aggregation::SumRaw,
                Agg::SumExpNegative => Aggregation::SumExpNegative,
            },
            parse_mode: if args.strict {
                ParseMode::Strict
            } else {
                ParseMode::Lenient
            },
        },
    };
    let splitter = RuleSplitter::default();
    let pipeline = Pipeline::new(cfg, generator.as_ref(), &store, &splitter)?;

    let mut input_errors = 0usize;
    let docs = load_corpus(&args.input)?.filter_map(|d| match d {
        Ok(d) => Some(d),
        Err(e) => {
            warn!("skipping input: {e}");
            input_errors += 1;
            None
        }
    });

    std::fs::create_dir_all(&args.output)
        .with_context(|| format!("creating {}", args.output.display()))?;
    let name = match args.format {
        Format::Json => "extractions.jsonl",
        Format::Nt => "extractions.nt",
    };
    let out_path = args.output.join(name);
    let mut out = BufWriter::new(
        File::create(&out_path).with_context(|| format!("creating {}", out_path.display()))?,
    );
    let summary = pipeline.run(docs, |r| {
        for doc in &r.extractions {
            write_doc(&mut out, doc, args.format, &policy)?;
        }
        Ok(())
    })?;
    out.flush()?;

    info!(
        "{} documents, {} sentences ({} failed), {} facts, {} linked ids, {} parse recoveries",
        summary.documents,
        summary.sentences_in,
        summary.sentences_failed,
        summary.facts,
        summary.linked_ids,
        summary.parse_recoveries
    );
    if let Some(path) = &args.summary {
        std::fs::write(path, serde_json::to_string_pretty(&summary)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
    }
    let code = summary.exit_code();
    Ok(if input_errors > 0 { 1 } else { code as u8 })
}

fn enrich(input: &Path, store: &Path, types: &Path, output: &Path, rejects: &Path) -> Result<u8> {
    let store = LinkStore::open(store)?;
    let maps = InverseMaps::from_store(&store, read_type_assignments(open(types)?)?)?;
    let mut ok = BufWriter::new(File::create(output)?);
    let mut bad = BufWriter::new(File::create(rejects)?);
    let (mut n_ok, mut n_bad) = (0, 0);
    for row in enrich_alignments(open(input)?, &maps) {
        match row? {
            Enrichment::Enriched(e) => {
                n_ok += 1;
                writeln!(ok, "{}", serde_json::to_string(&e)?)?;
            }
            Enrichment::Rejected(r) => {
                n_bad += 1;
                writeln!(bad, "{}", serde_json::to_string(&r)?)?;
            }
        }
    }
    ok.flush()?;
    bad.flush()?;
    info!("{n_ok} rows enriched, {n_bad} rejected");
    Ok(0)
}

fn policy(local_namespace: &str) -> Result<IriPolicy> {
    let d = IriPolicy::default();
    Ok(IriPolicy::new(
        &d.wikidata_entity_base,
        &d.wikidata_property_base,
        local_namespace,
    )?)
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("opening {}", path.display()))?,
    ))
}

fn read_extractions(path: &Path) -> Result<impl Iterator<Item = Result<ExtractionDocument>>> {
    let reader = open(path)?;
    let path = path.display().to_string();
    Ok(reader
        .lines()
        .enumerate()
        .filter(|(_, l)| !matches!(l, Ok(l) if l.trim().is_empty()))
        .map(move |(i, l)| {
            let l = l?;
            from_json(&l).with_context(|| format!("{path}:{}", i + 1))
        }))
}

fn write_doc(
    out: &mut impl Write,
    doc: &ExtractionDocument,
    format: Format,
    policy: &IriPolicy,
) -> io::Result<()> {
    match format {
        Format::Json => writeln!(out, "{}", to_json(doc)),
        Format::Nt => {
            for line in to_ntriples(doc, policy) {
                writeln!(out, "{line}")?;
            }
            Ok(())
        }
    }
}
