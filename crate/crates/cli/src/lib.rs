//! Command-line driver: argument parsing, config resolution, artifact output
//! and the mapping from errors to exit codes.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use wiretap_core::clustering::build_equalization;
use wiretap_core::eval::{export_decision_regions, leakage_proxy, nats_to_bits, GridSpec};
use wiretap_core::training::{cluster_codebook, run_naive_diagnostic};
use wiretap_core::{
    estimate_ser, run_full_pipeline, secrecy_capacity, snr_db_to_variance, ChannelParams,
    Checkpoint, CosetCode, Provenance, Result, RunConfig, SerSweep, WiretapError, WiretapModel,
};

pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_IO: u8 = 3;
pub const EXIT_NUMERIC: u8 = 4;
pub const EXIT_INTERNAL: u8 = 1;

#[derive(Debug, Parser)]
#[command(name = "wiretap", version, about = "Wiretap-channel autoencoder simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration. Built-in defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory. Falls back to `output_dir` in the config, then `out`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Runs all four training phases and writes the checkpoint and traces.
    Train {
        #[command(flatten)]
        common: Common,
        /// Replaces the security phase with the unbounded difference loss.
        #[arg(long)]
        diagnostic_naive_loss: bool,
    },
    /// SER sweeps of the pre-security and final models, plus leakage.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Prints the Gaussian secrecy capacity in bits and nats.
    Capacity {
        #[command(flatten)]
        common: Common,
        /// Signal power per real dimension.
        #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
        power: f64,
        /// Bob's SNR in dB. Defaults to the configured training SNR.
        #[arg(long, allow_negative_numbers = true)]
        bob_snr_db: Option<f64>,
        /// Eve's extra degradation in dB. Defaults to the configured value.
        #[arg(long, allow_negative_numbers = true, conflicts_with = "no_eve_extra")]
        eve_extra_snr_db: Option<f64>,
        /// Gives Eve no extra noise, so her channel equals Bob's.
        #[arg(long)]
        no_eve_extra: bool,
    },
    /// Writes constellations and decision regions from a checkpoint.
    ExportConstellation {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Re-clusters the phase-1 constellation of a checkpoint.
    Cluster {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

pub fn exit_code(err: &WiretapError) -> u8 {
    match err {
        WiretapError::Config { .. }
        | WiretapError::Parameter(_)
        | WiretapError::Input(_)
        | WiretapError::Shape { .. }
        | WiretapError::Unsupported(_) => EXIT_VALIDATION,
        WiretapError::Io { .. } | WiretapError::Load { .. } => EXIT_IO,
        WiretapError::Numeric(_) | WiretapError::DegenerateInput(_) => EXIT_NUMERIC,
        WiretapError::State(_) => EXIT_INTERNAL,
    }
}

fn resolve_config(common: &Common, fallback: Option<&RunConfig>) -> Result<RunConfig> {
    let mut config = match (&common.config, fallback) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(c)) => c.clone(),
        (None, None) => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

fn output_dir(common: &Common, config: &RunConfig) -> Result<PathBuf> {
    let dir = common
        .out
        .clone()
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&dir).map_err(|e| WiretapError::io(&dir, e))?;
    Ok(dir)
}

/// Creates `dir/name`, writes the provenance comment, then the body.
fn write_artifact(
    dir: &Path,
    name: &str,
    provenance: &Provenance,
    body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> Result<PathBuf> {
    let path = dir.join(name);
    let io = |e| WiretapError::io(&path, e);
    let mut out = BufWriter::new(File::create(&path).map_err(io)?);
    writeln!(out, "{}", provenance.comment_line()).map_err(io)?;
    body(&mut out).map_err(io)?;
    out.flush().map_err(io)?;
    Ok(path)
}

fn report(path: &Path) {
    println!("wrote {}", path.display());
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            common,
            diagnostic_naive_loss,
        } => train(&common, diagnostic_naive_loss),
        Command::Evaluate { common, checkpoint } => evaluate(&common, &checkpoint),
        Command::Capacity {
            common,
            power,
            bob_snr_db,
            eve_extra_snr_db,
            no_eve_extra,
        } => capacity(&common, power, bob_snr_db, eve_extra_snr_db, no_eve_extra),
        Command::ExportConstellation { common, checkpoint } => export_constellation(&common, &checkpoint),
        Command::Cluster { common, checkpoint } => cluster(&common, &checkpoint),
    }
}

fn train(common: &Common, naive: bool) -> Result<()> {
    let config = resolve_config(common, None)?;
    let dir = output_dir(common, &config)?;
    let prov = config.provenance();

    let resolved = dir.join("config.toml");
    std::fs::write(&resolved, config.to_toml_string()?).map_err(|e| WiretapError::io(&resolved, e))?;
    report(&resolved);

    if naive {
        let (model, trace) = run_naive_diagnostic(&config, config.phases.steps[2])?;
        report(&write_artifact(&dir, "loss_trace_naive.csv", &prov, |w| trace.write_csv(w))?);
        let codebook = model.codebook()?;
        report(&write_artifact(&dir, "constellation_naive.csv", &prov, |w| codebook.write_csv(w))?);
        let min = trace.phase(3).map(|r| r.loss).fold(f64::INFINITY, f64::min);
        println!("naive difference loss minimum: {min}");
        return Ok(());
    }

    let output = run_full_pipeline(&config)?;
    let checkpoint = Checkpoint::from_pipeline(&config, &output);
    let path = dir.join("checkpoint.json");
    checkpoint.save(&path)?;
    report(&path);
    report(&write_artifact(&dir, "loss_trace.csv", &prov, |w| output.trace.write_csv(w))?);
    report(&write_artifact(&dir, "constellation_phase1.csv", &prov, |w| {
        output.phase1_codebook.write_csv(w)
    })?);
    report(&write_artifact(&dir, "constellation_final.csv", &prov, |w| {
        output.final_codebook.write_csv(w)
    })?);
    report(&write_artifact(&dir, "clusters.csv", &prov, |w| output.clusters.write_labels_csv(w))?);
    report(&write_artifact(&dir, "cluster_centers.csv", &prov, |w| {
        output.clusters.write_centers_csv(w)
    })?);
    Ok(())
}

fn evaluate(common: &Common, checkpoint_path: &Path) -> Result<()> {
    let checkpoint = Checkpoint::load(checkpoint_path)?;
    let config = resolve_config(common, Some(&checkpoint.config))?;
    let dir = output_dir(common, &config)?;
    let prov = config.provenance();
    let eval = &config.evaluation;

    let code = CosetCode::new(&checkpoint.clusters, config.coset_layout);
    let sweep = SerSweep {
        snr_db: eval.snr_db.clone(),
        eve_extra_snr_db: eval.eve_extra_snr_db,
        samples_per_point: eval.samples_per_point,
        seed: config.seed,
    };
    let leakage_channel = ChannelParams::new(eval.leakage_snr_db, eval.eve_extra_snr_db)?;
    let mut leakage = Vec::new();
    for (name, model) in [("before", &checkpoint.pre_security), ("after", &checkpoint.final_model)] {
        let table = estimate_ser(model, Some(&code), &sweep)?;
        let path = dir.join(format!("ser_{name}.csv"));
        let io = |e| WiretapError::io(&path, e);
        let mut out = BufWriter::new(File::create(&path).map_err(io)?);
        table.write_csv(&mut out, Some(&prov)).map_err(io)?;
        out.flush().map_err(io)?;
        report(&path);
        let mi = leakage_proxy(model, &code, leakage_channel, eval.leakage_samples, config.seed)?;
        leakage.push((name, mi));
    }

    let path = write_artifact(&dir, "leakage.csv", &prov, |w| {
        writeln!(w, "snapshot,bob_snr_db,eve_extra_snr_db,samples,secure_messages,mutual_information_bits")?;
        for (name, mi) in &leakage {
            writeln!(
                w,
                "{name},{},{},{},{},{mi}",
                eval.leakage_snr_db,
                eval.eve_extra_snr_db,
                eval.leakage_samples,
                code.secure_message_count()
            )?;
        }
        Ok(())
    })?;
    report(&path);
    for (name, mi) in &leakage {
        println!(
            "leakage {name}: {mi:.4} bits of {:.4} (Bob {} dB, Eve +{} dB)",
            code.secure_bits(),
            eval.leakage_snr_db,
            eval.eve_extra_snr_db
        );
    }
    Ok(())
}

fn capacity(
    common: &Common,
    power: f64,
    bob_snr_db: Option<f64>,
    eve_extra_snr_db: Option<f64>,
    no_eve_extra: bool,
) -> Result<()> {
    let config = resolve_config(common, None)?;
    let bob_db = bob_snr_db.unwrap_or(config.channel.bob_snr_db);
    let eve_db = eve_extra_snr_db.unwrap_or(config.channel.eve_extra_snr_db);
    for (name, v) in [("--bob-snr-db", bob_db), ("--eve-extra-snr-db", eve_db)] {
        if !v.is_finite() {
            return Err(WiretapError::Parameter(format!("{name} must be finite, got {v}")));
        }
    }
    let bob_var = snr_db_to_variance(bob_db);
    let eve_var = if no_eve_extra { 0.0 } else { snr_db_to_variance(eve_db) };
    let nats = secrecy_capacity(power, bob_var, eve_var)?;
    let bits = nats_to_bits(nats);
    println!("secrecy capacity: {bits} bits ({nats} nats) per real channel use");

    if common.out.is_some() || config.output_dir.is_some() {
        let dir = output_dir(common, &config)?;
        let path = write_artifact(&dir, "capacity.csv", &config.provenance(), |w| {
            writeln!(w, "power,bob_variance,eve_extra_variance,capacity_bits,capacity_nats")?;
            writeln!(w, "{power},{bob_var},{eve_var},{bits},{nats}")
        })?;
        report(&path);
    }
    Ok(())
}

fn write_regions(dir: &Path, prov: &Provenance, model: &WiretapModel, tag: &str) -> Result<()> {
    let spec = GridSpec::for_dim(model.codeword_dim());
    for (who, decoder) in [("bob", &model.bob), ("eve", &model.eve)] {
        let grid = export_decision_regions(decoder, spec)?;
        let path = dir.join(format!("decision_regions_{who}_{tag}.csv"));
        let io = |e| WiretapError::io(&path, e);
        let mut out = BufWriter::new(File::create(&path).map_err(io)?);
        grid.write_csv(&mut out, Some(prov)).map_err(io)?;
        out.flush().map_err(io)?;
        report(&path);
    }
    Ok(())
}

fn export_constellation(common: &Common, checkpoint_path: &Path) -> Result<()> {
    let checkpoint = Checkpoint::load(checkpoint_path)?;
    let config = resolve_config(common, Some(&checkpoint.config))?;
    let dir = output_dir(common, &config)?;
    let prov = checkpoint.provenance.clone();
    for (tag, model) in [("phase1", &checkpoint.pre_security), ("final", &checkpoint.final_model)] {
        let codebook = model.codebook()?;
        report(&write_artifact(&dir, &format!("constellation_{tag}.csv"), &prov, |w| {
            codebook.write_csv(w)
        })?);
        if model.codeword_dim() == 2 {
            write_regions(&dir, &prov, model, tag)?;
        }
    }
    if checkpoint.config.codeword_dim != 2 {
        println!(
            "decision regions skipped: codewords have {} dimensions",
            checkpoint.config.codeword_dim
        );
    }
    Ok(())
}

fn cluster(common: &Common, checkpoint_path: &Path) -> Result<()> {
    let checkpoint = Checkpoint::load(checkpoint_path)?;
    let config = resolve_config(common, Some(&checkpoint.config))?;
    if config.message_count != checkpoint.config.message_count {
        return Err(WiretapError::config(
            "message_count",
            format!(
                "checkpoint holds {} messages, config asks for {}",
                checkpoint.config.message_count, config.message_count
            ),
        ));
    }
    let dir = output_dir(common, &config)?;
    let prov = config.provenance();
    let codebook = checkpoint.pre_security.codebook()?;
    let clusters = cluster_codebook(&config, &codebook)?;
    let equalization = build_equalization(&clusters);

    report(&write_artifact(&dir, "clusters.csv", &prov, |w| clusters.write_labels_csv(w))?);
    report(&write_artifact(&dir, "cluster_centers.csv", &prov, |w| clusters.write_centers_csv(w))?);
    report(&write_artifact(&dir, "equalization.csv", &prov, |w| {
        for row in equalization.matrix().rows() {
            let cells: Vec<String> = row.iter().map(f64::to_string).collect();
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    })?);
    println!(
        "{} clusters of {}, cost {}",
        clusters.cluster_count(),
        clusters.cluster_size(),
        clusters.cost(codebook.codewords.view())
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_classes_map_to_exit_codes() {
        let io = WiretapError::io("x", std::io::Error::other("boom"));
        assert_eq!(exit_code(&io), EXIT_IO);
        assert_eq!(exit_code(&WiretapError::config("seed", "bad")), EXIT_VALIDATION);
        assert_eq!(exit_code(&WiretapError::Parameter("p".into())), EXIT_VALIDATION);
        assert_eq!(exit_code(&WiretapError::Numeric("nan".into())), EXIT_NUMERIC);
        assert_eq!(exit_code(&WiretapError::DegenerateInput("zero".into())), EXIT_NUMERIC);
        let load = WiretapError::Load {
            path: "c.json".into(),
            message: "truncated".into(),
        };
        assert_eq!(exit_code(&load), EXIT_IO);
    }

    #[test]
    fn seed_flag_overrides_config() {
        let common = Common {
            config: None,
            seed: Some(77),
            out: None,
        };
        assert_eq!(resolve_config(&common, None).unwrap().seed, 77);
        let base = RunConfig {
            seed: 5,
            ..RunConfig::default()
        };
        let common = Common { seed: None, ..common };
        assert_eq!(resolve_config(&common, Some(&base)).unwrap().seed, 5);
    }
}
