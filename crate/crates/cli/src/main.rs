//! `olbf`: waveform export, CRLB reports, coherent-gain sweeps and the
//! moving-array scenarios.

// `!(x > 0.0)` is deliberate: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod selftest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use olbf_core::analysis::{
    default_sigma_grid, gain_probability_sweep, log_grid, CrlbPreset, CrlbReport,
    DEFAULT_SWEEP_POINTS, DEFAULT_SWEEP_TRIALS,
};
use olbf_core::io::write_gain_curve;
use olbf_core::io::write_waveform;
use olbf_core::scenario::{run_scenario, ScenarioConfig};
use olbf_core::waveform::{
    assign_signatures, msbw_analytic, synthesize, validate_spec, WaveformSpec,
};
use olbf_core::{Error, ROUNDED_SPEED_OF_LIGHT, SPEED_OF_LIGHT};

const EXIT_USAGE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_SELFTEST: u8 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "olbf",
    version,
    about = "Open-loop distributed beamforming simulator"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Global {
    /// Master seed; every random draw derives from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for output files.
    #[arg(long, global = true, default_value = ".")]
    output_dir: PathBuf,
    /// Use c = 3e8 m/s instead of 299 792 458 m/s.
    #[arg(long, global = true)]
    paper_c: bool,
}

impl Global {
    fn c(&self) -> f64 {
        if self.paper_c {
            ROUNDED_SPEED_OF_LIGHT
        } else {
            SPEED_OF_LIGHT
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Preset {
    TwoNode,
    ThreeNode,
}

impl Preset {
    fn name(self) -> &'static str {
        match self {
            Preset::TwoNode => "two-node",
            Preset::ThreeNode => "three-node",
        }
    }

    fn file_stem(self) -> &'static str {
        match self {
            Preset::TwoNode => "two_node",
            Preset::ThreeNode => "three_node",
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize a node's ranging waveform and write it as CSV plus a JSON sidecar.
    Waveform {
        #[arg(long, value_enum, default_value = "two-node")]
        preset: Preset,
        /// Signature index (0 ascending, 1 descending, then lexicographic).
        #[arg(long, default_value_t = 0)]
        node: usize,
        /// Export only the real part (imaginary column written as zero).
        #[arg(long)]
        real: bool,
    },
    /// Print the delay and range bound for a preset.
    Crlb {
        #[arg(long, value_enum, default_value = "two-node")]
        preset: Preset,
    },
    /// Monte-Carlo sweep of P(G_c ≥ threshold) against range-error spread.
    Montecarlo {
        /// Array sizes, comma separated.
        #[arg(long, value_delimiter = ',', default_values_t = vec![2usize, 3, 10, 30, 100])]
        nodes: Vec<usize>,
        #[arg(long, default_value_t = DEFAULT_SWEEP_TRIALS)]
        trials: usize,
        #[arg(long, default_value_t = 0.9)]
        threshold: f64,
        #[arg(long, default_value_t = DEFAULT_SWEEP_POINTS)]
        points: usize,
        /// Beamforming carrier, Hz.
        #[arg(long, default_value_t = 1.5e9)]
        frequency: f64,
    },
    /// Run a moving-array experiment from a config file or preset.
    Scenario {
        /// Scenario config (TOML).
        config: Option<PathBuf>,
        #[arg(long, value_enum, conflicts_with = "config")]
        preset: Option<Preset>,
        /// Freeze the phases after calibration.
        #[arg(long)]
        no_correction: bool,
    },
    /// Re-run the headline checks and report pass/fail.
    Selftest,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: EXIT_CONFIG,
            message: e.to_string(),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("olbf: {}", f.message.replace('\n', " "));
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let g = cli.global;
    match cli.command {
        Command::Waveform { preset, node, real } => waveform(&g, preset, node, real),
        Command::Crlb { preset } => {
            print!("{}", crlb_text(preset, g.c())?);
            Ok(())
        }
        Command::Montecarlo {
            nodes,
            trials,
            threshold,
            points,
            frequency,
        } => montecarlo(&g, &nodes, trials, threshold, points, frequency),
        Command::Scenario {
            config,
            preset,
            no_correction,
        } => scenario(&g, config.as_deref(), preset, no_correction),
        Command::Selftest => {
            let ok = selftest::run(g.c(), &mut std::io::stdout());
            if ok {
                Ok(())
            } else {
                Err(Failure {
                    code: EXIT_SELFTEST,
                    message: "selftest failed".into(),
                })
            }
        }
    }
}

fn waveform(g: &Global, preset: Preset, node: usize, real: bool) -> Result<(), Failure> {
    let spec = match preset {
        Preset::TwoNode => WaveformSpec::two_node(),
        Preset::ThreeNode => WaveformSpec::three_node(),
    };
    let spec = validate_spec(spec, node + 1)?;
    let sig = assign_signatures(spec.n_pulses, node + 1)?
        .pop()
        .expect("one per node");
    let mut s = synthesize(&spec, &sig)?;
    if real {
        s.samples_mut().iter_mut().for_each(|x| x.im = 0.0);
    }
    let path = g
        .output_dir
        .join(format!("waveform_{}_node{node}.csv", preset.file_stem()));
    write_waveform(&path, &s, &spec, &sig)?;
    println!("wrote {} ({} samples)", path.display(), s.len());
    println!("pulse order      {:?}", sig.pulse_order);
    println!(
        "tones            f1 {:.6e} Hz, δf {:.6e} Hz, Δf {:.6e} Hz",
        spec.f1,
        spec.delta_f_step,
        spec.tone_separation()
    );
    println!("msbw (analytic)  {:.6e} rad^2/s^2", msbw_analytic(&spec));
    Ok(())
}

fn report_lines(out: &mut String, r: &CrlbReport) {
    use std::fmt::Write;
    let _ = writeln!(out, "post SNR         {:.2} dB", r.post_snr_db);
    let _ = writeln!(out, "delay variance   {:.4e} s^2", r.delay_variance);
    let _ = writeln!(out, "range std        {:.4} mm", r.range_std * 1e3);
    let _ = writeln!(out, "max frequency    {:.4} GHz", r.max_frequency / 1e9);
}

fn crlb_text(preset: Preset, c: f64) -> Result<String, Failure> {
    use std::fmt::Write;
    let p = CrlbPreset::by_name(preset.name())?;
    let r = p.report(c)?;
    let mut out = String::new();
    let _ = writeln!(out, "preset           {}", p.name);
    let _ = writeln!(out, "speed of light   {c} m/s");
    let _ = writeln!(out, "msbw             {:.5e} rad^2/s^2", p.msbw);
    let _ = writeln!(out, "input SNR        {:.2} dB", p.snr_db);
    let _ = writeln!(
        out,
        "processing gain  {:.2} dB (N={}, T_r={} s, BW_n={} Hz)",
        r.processing_gain_db, p.n_pulses, p.t_r, p.noise_bw
    );
    report_lines(&mut out, &r);
    for (label, msbw, alt) in p.alternative_reports(c)? {
        let _ = writeln!(out, "alternative      {label}: msbw {msbw:.5e} rad^2/s^2");
        let mut block = String::new();
        report_lines(&mut block, &alt);
        for line in block.lines() {
            let _ = writeln!(out, "  {line}");
        }
    }
    Ok(out)
}

fn montecarlo(
    g: &Global,
    nodes: &[usize],
    trials: usize,
    threshold: f64,
    points: usize,
    frequency: f64,
) -> Result<(), Failure> {
    if !(frequency > 0.0) {
        return Err(Failure {
            code: EXIT_USAGE,
            message: "frequency must be positive".into(),
        });
    }
    let wavelength = g.c() / frequency;
    let grid = if points == DEFAULT_SWEEP_POINTS {
        default_sigma_grid(wavelength)
    } else {
        log_grid(wavelength / 200.0, wavelength / 2.0, points)?
    };
    let seed = g.seed.unwrap_or(1);
    for &n in nodes {
        let curve = gain_probability_sweep(n, &grid, threshold, trials, seed, wavelength)?;
        let path = g.output_dir.join(format!("gain_curve_n{n}.csv"));
        write_gain_curve(&path, &curve)?;
        let sol = curve.sigma_over_lambda();
        let reach = sol
            .iter()
            .zip(&curve.probability)
            .take_while(|(_, p)| **p >= 0.999)
            .last()
            .map(|(s, _)| format!("{s:.4}"))
            .unwrap_or_else(|| "-".into());
        println!(
            "n={n:<4} trials={trials} P(G_c>={threshold}) >= 0.999 up to sigma_d/lambda = {reach}; wrote {}",
            path.display()
        );
    }
    Ok(())
}

fn load_scenario(config: Option<&Path>, preset: Option<Preset>) -> Result<ScenarioConfig, Failure> {
    match (config, preset) {
        (Some(p), _) => Ok(ScenarioConfig::from_file(p)?),
        (None, Some(Preset::TwoNode)) => Ok(ScenarioConfig::two_node()),
        (None, Some(Preset::ThreeNode)) => Ok(ScenarioConfig::three_node()),
        (None, None) => Err(Failure {
            code: EXIT_USAGE,
            message: "scenario needs a config file or --preset".into(),
        }),
    }
}

fn scenario(
    g: &Global,
    config: Option<&Path>,
    preset: Option<Preset>,
    no_correction: bool,
) -> Result<(), Failure> {
    let mut cfg = load_scenario(config, preset)?;
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if no_correction {
        cfg.correction_enabled = false;
    }
    if g.paper_c {
        cfg.speed_of_light = ROUNDED_SPEED_OF_LIGHT;
    }
    let result = run_scenario(&cfg)?;
    let files = result.write_all(&g.output_dir)?;
    let s = &result.summary;
    println!(
        "scenario {} seed {} correction {}",
        cfg.name,
        cfg.seed,
        if cfg.correction_enabled { "on" } else { "off" }
    );
    for r in &result.records {
        println!(
            "  position {:2}  {:.4} m  combined/ideal {:.4}  power {:.4}",
            r.index,
            r.position,
            r.amplitude_ratio(),
            r.power_ratio()
        );
    }
    println!(
        "min combined/ideal {:.4} (power {:.4}) at position {}; mean {:.4}; diverged updates {}",
        s.min_amplitude_ratio,
        s.min_power_ratio,
        s.min_index,
        s.mean_amplitude_ratio,
        s.diverged_updates
    );
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}
