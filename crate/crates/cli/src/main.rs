use std::process::ExitCode;

use clap::Parser;
use factpref_cli::cli::{Cli, Command};
use factpref_cli::{Pipeline, PipelineError};

fn run(cli: &Cli) -> Result<(), PipelineError> {
    let pipeline = Pipeline::new(cli.resolve_config()?)?;
    match &cli.command {
        Command::GeneratePairs(_) => {
            let s = pipeline.generate_pairs()?;
            if s.documents == 0 {
                eprintln!("warning: no documents; wrote an empty pairs file");
            }
            for skip in &s.skipped {
                eprintln!("skip {}: {}", skip.doc_id, skip.reason);
            }
            println!("{} documents -> {} pairs, {} skipped", s.documents, s.pairs, s.skipped.len());
        }
        Command::Score => println!("scored {} pairs", pipeline.score()?),
        Command::BuildPrefs(_) => {
            let r = pipeline.build_prefs()?;
            println!(
                "{} pairs -> {} preferences ({} conflicts, {} ties dropped)",
                r.total_pairs, r.retained, r.dropped_conflict, r.dropped_tie
            );
        }
        Command::Train(_) => {
            let t = pipeline.train()?;
            println!(
                "{} steps: loss {:.6} -> {:.6}, accuracy {:.3} -> {:.3}, params {}",
                t.steps, t.first.loss, t.last.loss, t.first.accuracy, t.last.accuracy, t.snapshot_id
            );
        }
        Command::Stats => print!("{}", pipeline.stats()?),
        Command::Evaluate(_) => print!("{}", pipeline.evaluate()?.to_table()),
        Command::RunAll(_) => {
            let r = pipeline.run_all()?;
            println!(
                "{} documents -> {} pairs -> {} preferences; {} training steps",
                r.generate.documents, r.scored, r.filter.retained, r.train.steps
            );
            print!("{}", r.stats);
            print!("{}", r.evaluation.to_table());
        }
        Command::ToyCorpus(a) => {
            let n = pipeline.toy_corpus(a.docs, a.seed, a.marker.as_deref())?;
            println!("wrote {n} documents to {}", pipeline.config().paths.documents.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
