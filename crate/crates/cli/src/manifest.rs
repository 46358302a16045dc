use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use cohortforge_core::pipeline::MANIFEST_FILE;

/// Audit record written to `manifest.txt` after every run.
#[derive(Debug, Default)]
pub struct Manifest {
    pub command: String,
    pub config: Option<PathBuf>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub timings: Vec<(String, Duration)>,
    pub workers: usize,
    pub exit_status: u8,
    pub error: Option<String>,
}

impl Manifest {
    pub fn new(command: &str, workers: usize) -> Self {
        Self {
            command: command.into(),
            workers,
            ..Default::default()
        }
    }

    pub fn timings(&mut self, t: &[(String, Duration)]) {
        self.timings.extend(t.iter().cloned());
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "command\t{}", self.command);
        if let Some(c) = &self.config {
            let _ = writeln!(s, "config\t{}", c.display());
        }
        for p in &self.inputs {
            let _ = writeln!(s, "input\t{}", p.display());
        }
        for p in &self.outputs {
            let _ = writeln!(s, "output\t{}", p.display());
        }
        for (name, d) in &self.timings {
            let _ = writeln!(s, "timing\t{name}\t{:.6}", d.as_secs_f64());
        }
        let _ = writeln!(s, "workers\t{}", self.workers);
        let _ = writeln!(s, "exit_status\t{}", self.exit_status);
        if let Some(e) = &self.error {
            let _ = writeln!(s, "error\t{}", e.replace('\n', " "));
        }
        s
    }

    pub fn write(&self, out: &Path) -> std::io::Result<()> {
        fs::create_dir_all(out)?;
        fs::write(out.join(MANIFEST_FILE), self.render())
    }
}
