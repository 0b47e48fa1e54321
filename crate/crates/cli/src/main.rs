use std::process::ExitCode;

use clap::{Parser, Subcommand};

use headsdf_cli::{
    cmd_extract, cmd_fit_proxy, cmd_gen_synthetic, cmd_gradcheck, cmd_orient2d, cmd_render,
    cmd_train, Common, ExtractArgs, FitProxyArgs, GenSyntheticArgs, GradcheckArgs, Orient2dArgs,
    RenderArgs, TrainArgs,
};

/// Multi-view implicit head reconstruction.
#[derive(Parser, Debug)]
#[command(name = "headsdf", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
    /// Log verbosity: -v info, -vv debug.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic multi-view scene with labels and orientation maps.
    GenSynthetic(GenSyntheticArgs),
    /// Fit the morphable face model to the scene's views and landmarks.
    FitProxy(FitProxyArgs),
    /// Detect 2D hair orientation maps with a Gabor filter bank.
    Orient2d(Orient2dArgs),
    /// Staged optimization of the distance, colour and semantic networks.
    Train(TrainArgs),
    /// Extract the zero level set of a checkpoint as an OBJ mesh.
    Extract(ExtractArgs),
    /// Render a checkpoint through one camera.
    Render(RenderArgs),
    /// Compare analytic and finite-difference gradients of every loss term.
    Gradcheck(GradcheckArgs),
}

fn run(cli: &Cli) -> headsdf::Result<bool> {
    let c = &cli.common;
    match &cli.command {
        Command::GenSynthetic(a) => {
            let cfg = cmd_gen_synthetic(a, c)?;
            println!("wrote {} views to {}", cfg.n_views, a.out.display());
        }
        Command::FitProxy(a) => {
            let r = cmd_fit_proxy(a, c)?;
            println!(
                "fitted views {:?}: energy {:.6e} -> {:.6e} in {} steps",
                r.views,
                r.initial_energy,
                r.final_energy,
                r.fit.trace.len().saturating_sub(1)
            );
        }
        Command::Orient2d(a) => {
            let counts = cmd_orient2d(a, c)?;
            for (i, n) in counts.iter().enumerate() {
                println!("view {i}: {n} oriented pixels");
            }
        }
        Command::Train(a) => {
            let (ckpt, csv) = cmd_train(a, c)?;
            println!(
                "checkpoint {}\nloss history {}",
                ckpt.display(),
                csv.display()
            );
        }
        Command::Extract(a) => {
            let r = cmd_extract(a, c)?;
            if r.vertices == 0 {
                eprintln!(
                    "warning: the field has no zero crossing inside the grid; wrote an empty mesh"
                );
            }
            println!(
                "{} vertices, {} triangles -> {}",
                r.vertices,
                r.triangles,
                a.out.display()
            );
        }
        Command::Render(a) => {
            for p in cmd_render(a, c)? {
                println!("{}", p.display());
            }
        }
        Command::Gradcheck(a) => {
            let r = cmd_gradcheck(a, c)?;
            for line in r.lines() {
                println!("{line}");
            }
            if !r.passed {
                let bad = r.terms.iter().filter(|t| !t.passed).count();
                eprintln!(
                    "GRADCHECK_FAILED: {bad} term(s) exceed relative error {:e}",
                    r.settings.tolerance
                );
                return Ok(false);
            }
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("{}: {e}", e.code());
            ExitCode::FAILURE
        }
    }
}
