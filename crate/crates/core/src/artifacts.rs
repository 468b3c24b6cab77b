//! Files written and read by experiments: CSV logs, `params.json` and
//! `critic.bin`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::actor::ParamsSnapshot;
use crate::analysis::BoundaryCurve;
use crate::critic::Mlp;
use crate::error::Result;
use crate::rl::{EpisodeLog, StepRecord};

pub const TRAIN_LOG_HEADER: &str = "episode,total_reward,steps,kp,ki,kd,rho,sigma";
pub const STEP_LOG_HEADER: &str = "n,setpoint,y,u_raw,u_sat,e_y,I_y,D,I_u,r";

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().has_headers(true).from_writer(w)
}

pub fn write_train_log<W: Write>(w: W, log: &[EpisodeLog]) -> Result<()> {
    let mut out = csv_writer(w);
    if log.is_empty() {
        out.write_record(TRAIN_LOG_HEADER.split(','))?;
    }
    for row in log {
        out.serialize(row)?;
    }
    out.flush()?;
    Ok(())
}

/// Streams per-step rows; the header is written once.
pub struct StepLogWriter<W: Write> {
    out: csv::Writer<W>,
    wrote_header: bool,
}

impl<W: Write> StepLogWriter<W> {
    pub fn new(w: W) -> Self {
        Self {
            out: csv::WriterBuilder::new().has_headers(false).from_writer(w),
            wrote_header: false,
        }
    }

    pub fn write(&mut self, rows: &[StepRecord]) -> Result<()> {
        if !self.wrote_header {
            self.out.write_record(STEP_LOG_HEADER.split(','))?;
            self.wrote_header = true;
        }
        for r in rows {
            self.out.serialize(r)?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        if !self.wrote_header {
            self.out.write_record(STEP_LOG_HEADER.split(','))?;
        }
        self.out.flush()?;
        Ok(())
    }
}

pub fn write_step_log<W: Write>(w: W, rows: &[StepRecord]) -> Result<()> {
    let mut out = StepLogWriter::new(w);
    out.write(rows)?;
    out.finish()
}

pub fn write_boundary<W: Write>(w: W, curve: &BoundaryCurve) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(["omega", "kp", "ki"])?;
    for p in &curve.points {
        out.write_record([p.omega.to_string(), p.kp.to_string(), p.ki.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_classification<W: Write>(w: W, rows: &[(f64, f64, bool)]) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(["kp", "ki", "stable"])?;
    for (kp, ki, stable) in rows {
        out.write_record([kp.to_string(), ki.to_string(), stable.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_params(path: &Path, params: &ParamsSnapshot) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut f, params)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

pub fn load_params(path: &Path) -> Result<ParamsSnapshot> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn save_critic(path: &Path, critic: &Mlp) -> Result<()> {
    std::fs::write(path, critic.to_bytes())?;
    Ok(())
}

pub fn load_critic(path: &Path) -> Result<Mlp> {
    Mlp::from_bytes(&std::fs::read(path)?)
}

pub fn save_train_log(path: &Path, log: &[EpisodeLog]) -> Result<()> {
    let f = BufWriter::new(File::create(path)?);
    write_train_log(f, log)
}
