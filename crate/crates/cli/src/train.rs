//! The `train` subcommand: runs the training loop, streams the learning
//! curve, keeps the best checkpoint and a resumable state file.

use std::fs::File;
use std::path::{Path, PathBuf};

use roars_core::policy::{save_checkpoint, train, CurveRow, NetConfig, TrainConfig, TrainEvent, TrainState};
use roars_core::rewriter::SearchConfig;
use roars_core::scenario::GenConfig;
use serde::{Deserialize, Serialize};

use crate::config::{ensure_parent, read_json, write_json};
use crate::CliError;

/// Contents of a `--train-config` file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainFile {
    pub train: TrainConfig,
    /// Defaults to 15/15 candidates on one site and 30/30 on several.
    pub search: Option<SearchConfig>,
}

#[derive(Debug, Clone)]
pub struct TrainArgs {
    pub gen: GenConfig,
    pub file: TrainFile,
    pub out: PathBuf,
    pub curve: PathBuf,
    pub state: PathBuf,
    pub resume: bool,
}

pub fn default_search(gen: &GenConfig) -> SearchConfig {
    if gen.sites.len() > 1 {
        SearchConfig::distributed()
    } else {
        SearchConfig::intra_site()
    }
}

/// `<out>` with `suffix` appended to the file name.
pub fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(suffix);
    out.with_file_name(name)
}

/// Runs training and returns the final state.
pub fn run_train(args: &TrainArgs) -> Result<TrainState, CliError> {
    let cfg = args.file.train;
    let search = args.file.search.unwrap_or_else(|| default_search(&args.gen));
    let net_config = NetConfig::for_generator(&args.gen, cfg.hidden);
    ensure_parent(&args.out)?;
    ensure_parent(&args.curve)?;

    let resume: Option<TrainState> = if args.resume && args.state.exists() {
        Some(read_json(&args.state)?)
    } else {
        None
    };
    let kept = match &resume {
        Some(st) => curve_rows_through(&args.curve, st.step)?,
        None => Vec::new(),
    };
    let file = File::create(&args.curve).map_err(|e| CliError::io(&args.curve, e))?;
    let mut curve = csv::Writer::from_writer(file);
    for row in &kept {
        write_row(&mut curve, row)?;
    }

    let mut failure: Option<CliError> = None;
    let mut keep = |r: Result<(), CliError>| {
        if let Err(e) = r {
            failure.get_or_insert(e);
        }
    };
    let (_, state) = train(&args.gen, &cfg, &search, net_config, resume, |ev| match ev {
        TrainEvent::Row(row) => keep(write_row(&mut curve, row)),
        TrainEvent::Best { net, step, .. } => keep(save_checkpoint(net, step, &args.out).map_err(Into::into)),
        TrainEvent::State(st) => keep(write_json(st, &args.state)),
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    if !args.out.exists() {
        // validation never improved on the initial parameters
        let net = roars_core::policy::PolicyNet::from_params(net_config, state.best_params.clone());
        save_checkpoint(&net, state.best_step, &args.out)?;
    }
    write_json(&state, &args.state)?;
    Ok(state)
}

fn write_row(w: &mut csv::Writer<File>, row: &CurveRow) -> Result<(), CliError> {
    w.serialize(row)?;
    w.flush().map_err(|e| CliError::Invalid(e.to_string()))?;
    Ok(())
}

/// Rows of an existing curve up to and including `step`; rows written after
/// the last saved state are dropped so a resumed run does not repeat them.
fn curve_rows_through(path: &Path, step: u64) -> Result<Vec<CurveRow>, CliError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut rdr = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for r in rdr.deserialize::<CurveRow>() {
        match r {
            Ok(row) if row.step <= step => rows.push(row),
            Ok(_) => {}
            // a repeated header line from an older writer
            Err(_) => {}
        }
    }
    Ok(rows)
}
