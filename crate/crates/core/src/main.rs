use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use vdmbs::harness::config::ExperimentConfig;
use vdmbs::harness::{decode_file, demo_phase_alignment, run_once, run_sweep, svg, sweep, SweepSpec};
use vdmbs::vdm::build_codebook;
use vdmbs::Result;

#[derive(Parser, Debug)]
#[command(name = "vdmbs", version, about = "Clock-free multi-sensor backscatter simulator and decoder")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML experiment configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a key path, e.g. `--set channel.noise_snr_db=20`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut overrides = self.set.clone();
        if let Some(s) = self.seed {
            overrides.push(format!("seed={s}"));
        }
        ExperimentConfig::load(self.config.as_deref(), &overrides)
    }
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Simulate and decode one experiment.
    Run(Common),
    /// Sweep one key path over a list of values.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Key path to sweep.
        #[arg(long)]
        param: String,
        /// Comma-separated raw values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long, default_value_t = 1)]
        reps: usize,
        /// Also write an SVG chart of the aggregate rows.
        #[arg(long)]
        emit_svg: bool,
    },
    /// Decode a recorded capture.
    Decode {
        #[command(flatten)]
        common: Common,
        /// VDMIQ1 capture file.
        iq: PathBuf,
    },
    /// Print the level table.
    Codebook(Common),
    /// Inter-channel delay demo.
    DemoSync(Common),
}

fn write_json<T: serde::Serialize>(dir: &Path, name: &str, v: &T) -> Result<String> {
    std::fs::create_dir_all(dir)?;
    let s = serde_json::to_string_pretty(v).expect("serializable");
    std::fs::write(dir.join(name), &s)?;
    Ok(s)
}

fn warn_all(w: &[String]) {
    for m in w {
        eprintln!("warning: {m}");
    }
}

fn exec(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Run(c) => {
            let cfg = c.load()?;
            let out = run_once(&cfg, Some(&c.out))?;
            warn_all(&out.report.warnings);
            println!("{}", serde_json::to_string_pretty(&out.report).expect("serializable"));
        }
        Cmd::Sweep {
            common,
            param,
            values,
            reps,
            emit_svg,
        } => {
            let cfg = common.load()?;
            let spec = SweepSpec {
                param: param.clone(),
                values,
                repetitions: reps,
            };
            let rows = run_sweep(&cfg, &spec, Some(&common.out))?;
            let mut buf = Vec::new();
            sweep::write_csv(&rows, &param, &mut buf)?;
            std::fs::write(common.out.join("sweep.csv"), &buf)?;
            print!("{}", String::from_utf8_lossy(&buf));
            if emit_svg {
                let chart = svg::line_chart(
                    &format!("mean SNR vs {param}"),
                    &param,
                    "mean SNR (dB)",
                    &sweep::aggregate_points(&rows),
                );
                std::fs::write(common.out.join("sweep.svg"), chart)?;
            }
        }
        Cmd::Decode { common, iq } => {
            let cfg = common.load()?;
            let d = decode_file(&iq, &cfg, Some(&common.out))?;
            warn_all(&d.diagnostics.warnings);
            println!("{}", serde_json::to_string_pretty(&d.diagnostics).expect("serializable"));
        }
        Cmd::Codebook(c) => {
            let cfg = c.load()?;
            let book = build_codebook(&cfg.vdm_config(), &cfg.vco)?;
            let mut buf = Vec::new();
            book.write_csv(&mut buf)?;
            print!("{}", String::from_utf8_lossy(&buf));
        }
        Cmd::DemoSync(c) => {
            let cfg = c.load()?;
            let r = demo_phase_alignment(&cfg)?;
            println!("{}", write_json(&c.out, "demo.json", &r)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match exec(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
