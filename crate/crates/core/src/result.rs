//! Reconstruction output with per-iteration trace.

use serde::{Deserialize, Serialize};

use crate::geometry::Image;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: usize,
    /// Objective value being minimized.
    pub loss: f64,
    /// Data-discrepancy part of the objective.
    pub data_term: f64,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ReconstructionResult {
    pub image: Image,
    pub trace: Vec<TracePoint>,
    pub wall_time_s: f64,
    pub iterations_run: usize,
    pub method: String,
}

impl ReconstructionResult {
    pub fn final_loss(&self) -> Option<f64> {
        self.trace.last().map(|t| t.loss)
    }

    pub fn final_data_term(&self) -> Option<f64> {
        self.trace.last().map(|t| t.data_term)
    }

    pub fn max_trace_psnr(&self) -> Option<f64> {
        self.trace.iter().filter_map(|t| t.psnr).fold(None, |m, p| {
            Some(m.map_or(p, |v: f64| v.max(p)))
        })
    }

    pub fn final_psnr(&self) -> Option<f64> {
        self.trace.iter().rev().find_map(|t| t.psnr)
    }

    /// Write the trace as CSV (`iteration,loss,data_term,psnr,ssim`).
    pub fn write_trace_csv(&self, path: impl AsRef<std::path::Path>) -> std::io::Result<()> {
        use std::io::Write;
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "iteration,loss,data_term,psnr,ssim")?;
        for t in &self.trace {
            writeln!(
                f,
                "{},{},{},{},{}",
                t.iteration,
                t.loss,
                t.data_term,
                t.psnr.map_or(String::new(), |v| v.to_string()),
                t.ssim.map_or(String::new(), |v| v.to_string()),
            )?;
        }
        Ok(())
    }
}
