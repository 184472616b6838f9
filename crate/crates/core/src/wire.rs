//! Line protocol for mechanisms that run in a separate process.
//!
//! The driver writes, one message per line:
//!
//! ```text
//! SETUP <d> <alpha>
//! BIT <i> <+1|-1>        d times, i = 1..=d
//! VEC <hex>              once per step
//! ```
//!
//! and the mechanism answers each `VEC` with `OUT <hex>` (or `ERR <text>`).
//! Vectors use the packed hex layout of [`SignVector::to_hex`]. The seed is
//! passed in the `CONTOBS_MECH_SEED` environment variable.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};

use crate::error::{lifecycle, protocol, Error, Result};
use crate::mechanisms::{ContinualMechanism, MechanismFactory};
use crate::problem::ProblemParams;
use crate::signvec::{Sign, SignVector};

pub const SEED_ENV: &str = "CONTOBS_MECH_SEED";

fn sign_token(bit: Sign) -> &'static str {
    match bit {
        Sign::Plus => "+1",
        Sign::Minus => "-1",
    }
}

/// Launches `sh -c <command>` once per game.
#[derive(Clone, Debug)]
pub struct ExternalMechanismFactory {
    command: String,
}

impl ExternalMechanismFactory {
    pub fn new(command: impl Into<String>) -> ExternalMechanismFactory {
        ExternalMechanismFactory {
            command: command.into(),
        }
    }

    pub fn command(&self) -> &str {
        &self.command
    }
}

impl MechanismFactory for ExternalMechanismFactory {
    fn name(&self) -> String {
        format!("external:{}", self.command)
    }

    fn create(&self, params: &ProblemParams, seed: u64) -> Result<Box<dyn ContinualMechanism>> {
        Ok(Box::new(ExternalMechanism::spawn(
            &self.command,
            params,
            seed,
        )?))
    }
}

pub struct ExternalMechanism {
    child: Child,
    stdin: Option<BufWriter<ChildStdin>>,
    stdout: BufReader<ChildStdout>,
    dim: usize,
    sent_bits: usize,
    line: String,
}

impl ExternalMechanism {
    pub fn spawn(command: &str, params: &ProblemParams, seed: u64) -> Result<ExternalMechanism> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .env(SEED_ENV, seed.to_string())
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let mut m = ExternalMechanism {
            child,
            stdin: Some(BufWriter::with_capacity(1 << 16, stdin)),
            stdout: BufReader::with_capacity(1 << 16, stdout),
            dim: params.dim(),
            sent_bits: 0,
            line: String::new(),
        };
        writeln!(m.writer(), "SETUP {} {}", params.dim(), params.alpha()).map_err(pipe_error)?;
        Ok(m)
    }

    fn writer(&mut self) -> &mut BufWriter<ChildStdin> {
        self.stdin.as_mut().expect("stdin is open until drop")
    }
}

impl ContinualMechanism for ExternalMechanism {
    fn absorb_bit(&mut self, index: usize, bit: Sign) -> Result<()> {
        if index != self.sent_bits || index >= self.dim {
            return Err(lifecycle(format!(
                "setup bit {index} out of order (expected {})",
                self.sent_bits
            )));
        }
        self.sent_bits += 1;
        writeln!(self.writer(), "BIT {} {}", index + 1, sign_token(bit)).map_err(pipe_error)?;
        Ok(())
    }

    fn step(&mut self, arrival: &SignVector) -> Result<SignVector> {
        if self.sent_bits != self.dim {
            return Err(lifecycle("step called before setup finished"));
        }
        let w = self.writer();
        writeln!(w, "VEC {}", arrival.to_hex()).map_err(pipe_error)?;
        w.flush().map_err(pipe_error)?;
        self.line.clear();
        if self.stdout.read_line(&mut self.line)? == 0 {
            return Err(protocol("external mechanism closed its output"));
        }
        let reply = self.line.trim_end();
        if let Some(hex) = reply.strip_prefix("OUT ") {
            SignVector::from_hex(self.dim, hex.trim())
                .map_err(|e| protocol(format!("bad OUT vector: {e}")))
        } else if let Some(msg) = reply.strip_prefix("ERR") {
            Err(protocol(format!("external mechanism error:{msg}")))
        } else {
            Err(protocol(format!("expected OUT, got {:?}", truncate(reply))))
        }
    }
}

impl Drop for ExternalMechanism {
    fn drop(&mut self) {
        if let Some(mut w) = self.stdin.take() {
            let _ = w.flush();
        }
        // Closing stdin lets a well-behaved mechanism exit on its own.
        if !matches!(self.child.try_wait(), Ok(Some(_))) {
            let _ = self.child.kill();
        }
        let _ = self.child.wait();
    }
}

/// A closed pipe means the mechanism went away mid-game.
fn pipe_error(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::BrokenPipe {
        protocol("external mechanism exited before the game ended")
    } else {
        e.into()
    }
}

fn truncate(s: &str) -> &str {
    match s.char_indices().nth(60) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

fn parse_bit(token: &str) -> Option<Sign> {
    match token {
        "+1" | "1" => Some(Sign::Plus),
        "-1" => Some(Sign::Minus),
        _ => None,
    }
}

/// Serves `factory` over the line protocol until the driver closes input.
///
/// `horizon` caps the number of steps accepted. Protocol errors are reported
/// to the driver as `ERR <text>` and returned.
pub fn serve<R: BufRead, W: Write>(
    mut input: R,
    mut output: W,
    factory: &dyn MechanismFactory,
    seed: u64,
    horizon: usize,
) -> Result<()> {
    let mut line = String::new();
    let mut next = |line: &mut String| -> Result<bool> {
        line.clear();
        Ok(input.read_line(line)? > 0)
    };
    let fail = |output: &mut W, e: Error| -> Result<()> {
        let _ = writeln!(output, "ERR {e}");
        let _ = output.flush();
        Err(e)
    };

    if !next(&mut line)? {
        return Ok(());
    }
    let mut parts = line.split_whitespace();
    let (dim, alpha) = match (parts.next(), parts.next(), parts.next(), parts.next()) {
        (Some("SETUP"), Some(d), Some(a), None) => match (d.parse::<usize>(), a.parse::<f64>()) {
            (Ok(d), Ok(a)) => (d, a),
            _ => {
                return fail(
                    &mut output,
                    protocol(format!("malformed SETUP {:?}", line.trim_end())),
                )
            }
        },
        _ => {
            return fail(
                &mut output,
                protocol(format!(
                    "expected SETUP, got {:?}",
                    truncate(line.trim_end())
                )),
            )
        }
    };
    let params = match ProblemParams::new(alpha, dim, horizon) {
        Ok(p) => p,
        Err(e) => return fail(&mut output, e),
    };
    let mut mech = factory.create(&params, seed)?;

    for i in 0..dim {
        if !next(&mut line)? {
            return fail(
                &mut output,
                protocol(format!("input ended after {i} of {dim} bits")),
            );
        }
        let mut parts = line.split_whitespace();
        let bit = match (parts.next(), parts.next(), parts.next(), parts.next()) {
            (Some("BIT"), Some(idx), Some(b), None) if idx.parse::<usize>() == Ok(i + 1) => {
                parse_bit(b)
            }
            _ => None,
        };
        let Some(bit) = bit else {
            return fail(
                &mut output,
                protocol(format!(
                    "expected BIT {}, got {:?}",
                    i + 1,
                    truncate(line.trim_end())
                )),
            );
        };
        if let Err(e) = mech.absorb_bit(i, bit) {
            return fail(&mut output, e);
        }
    }

    while next(&mut line)? {
        let trimmed = line.trim_end();
        let Some(hex) = trimmed.strip_prefix("VEC ") else {
            return fail(
                &mut output,
                protocol(format!("expected VEC, got {:?}", truncate(trimmed))),
            );
        };
        let step = SignVector::from_hex(dim, hex.trim())
            .map_err(|e| protocol(format!("bad VEC vector: {e}")))
            .and_then(|v| mech.step(&v));
        match step {
            Ok(y) => {
                writeln!(output, "OUT {}", y.to_hex())?;
                output.flush()?;
            }
            Err(e) => return fail(&mut output, e),
        }
    }
    Ok(())
}
