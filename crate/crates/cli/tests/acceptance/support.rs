use std::fmt::Display;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::sync::mpsc;
use std::time::{Duration, Instant};

pub type Check = Result<String, String>;

pub fn err(e: impl Display) -> String {
    e.to_string()
}

pub fn mushra() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mushra"))
}

/// Runs the command to completion and returns its stdout, or an error
/// carrying the exit status and stderr.
pub fn run_ok(cmd: &mut Command) -> Result<String, String> {
    let out = cmd.output().map_err(err)?;
    if !out.status.success() {
        return Err(format!(
            "{cmd:?} exited with {}: {}",
            out.status,
            String::from_utf8_lossy(&out.stderr).trim()
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

/// A spawned `serve` process with its stdout forwarded line by line.
pub struct Spawned {
    pub child: Child,
    lines: mpsc::Receiver<String>,
}

impl Spawned {
    pub fn start(cmd: &mut Command) -> Result<Self, String> {
        let mut child = cmd
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(err)?;
        let stdout = child.stdout.take().expect("piped");
        let (tx, lines) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines().map_while(Result::ok) {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Self { child, lines })
    }

    pub fn line_matching(&self, pred: impl Fn(&str) -> bool, timeout: Duration) -> Result<String, String> {
        let end = Instant::now() + timeout;
        loop {
            let left = end.saturating_duration_since(Instant::now());
            match self.lines.recv_timeout(left) {
                Ok(l) if pred(&l) => return Ok(l),
                Ok(_) => {}
                Err(_) => return Err("timed out waiting for server output".into()),
            }
        }
    }

    /// Waits for exit and returns the remaining stdout lines.
    pub fn wait(mut self, timeout: Duration) -> Result<Vec<String>, String> {
        let end = Instant::now() + timeout;
        loop {
            if let Some(status) = self.child.try_wait().map_err(err)? {
                std::thread::sleep(Duration::from_millis(50));
                let rest: Vec<String> = self.lines.try_iter().collect();
                if !status.success() {
                    return Err(format!("server exited with {status}"));
                }
                return Ok(rest);
            }
            if Instant::now() > end {
                let _ = self.child.kill();
                return Err("server did not exit in time".into());
            }
            std::thread::sleep(Duration::from_millis(20));
        }
    }
}

impl Drop for Spawned {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Parses a header-first CSV without quoting into maps keyed by column.
pub fn read_plain_csv(path: &Path) -> Result<Vec<std::collections::BTreeMap<String, String>>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines.next().ok_or("empty csv")?.split(',').collect();
    lines
        .map(|l| {
            let cells: Vec<&str> = l.split(',').collect();
            if cells.len() != header.len() {
                return Err(format!("{}: ragged row {l:?}", path.display()));
            }
            Ok(header
                .iter()
                .zip(cells)
                .map(|(h, c)| (h.to_string(), c.to_string()))
                .collect())
        })
        .collect()
}
