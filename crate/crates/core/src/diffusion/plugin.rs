//! Host and plugin sides of the external denoiser protocol.
//!
//! Every message is a 16-byte little-endian header (magic `FNDP`, u32
//! version, u32 kind, u32 payload length) followed by the payload. The host
//! sends one HANDSHAKE (JSON), then STEP_REQUEST frames each answered by a
//! STEP_RESPONSE, and finally SHUTDOWN. A plugin may answer any request
//! with an ERROR frame carrying a UTF-8 message.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};

use serde::{Deserialize, Serialize};

use super::{ConditionChannels, Denoiser, CONDITION_CHANNELS};
use crate::error::{Error, Result};

pub const PROTOCOL_MAGIC: [u8; 4] = *b"FNDP";
pub const PROTOCOL_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u32)]
pub enum MessageKind {
    Handshake = 1,
    StepRequest = 2,
    StepResponse = 3,
    Shutdown = 4,
    Error = 5,
}

impl MessageKind {
    fn from_u32(v: u32) -> Option<Self> {
        Some(match v {
            1 => Self::Handshake,
            2 => Self::StepRequest,
            3 => Self::StepResponse,
            4 => Self::Shutdown,
            5 => Self::Error,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Handshake {
    pub dims: [usize; 3],
    pub channels: usize,
    pub timesteps: usize,
}

impl Handshake {
    pub fn new(dims: [usize; 3], timesteps: usize) -> Self {
        Self {
            dims,
            channels: 1 + CONDITION_CHANNELS,
            timesteps,
        }
    }

    pub fn voxel_count(&self) -> usize {
        self.dims.iter().product()
    }
}

fn io_err(e: std::io::Error) -> Error {
    Error::Protocol(format!("stream error: {e}"))
}

pub fn write_message<W: Write + ?Sized>(w: &mut W, kind: MessageKind, payload: &[u8]) -> Result<()> {
    let len = u32::try_from(payload.len())
        .map_err(|_| Error::Protocol(format!("payload of {} bytes too large", payload.len())))?;
    let mut header = [0u8; HEADER_LEN];
    header[..4].copy_from_slice(&PROTOCOL_MAGIC);
    header[4..8].copy_from_slice(&PROTOCOL_VERSION.to_le_bytes());
    header[8..12].copy_from_slice(&(kind as u32).to_le_bytes());
    header[12..].copy_from_slice(&len.to_le_bytes());
    w.write_all(&header).map_err(io_err)?;
    w.write_all(payload).map_err(io_err)?;
    w.flush().map_err(io_err)
}

pub fn read_message<R: Read + ?Sized>(r: &mut R) -> Result<(MessageKind, Vec<u8>)> {
    let mut header = [0u8; HEADER_LEN];
    r.read_exact(&mut header).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Protocol("stream closed before a message header".into()),
        _ => io_err(e),
    })?;
    if header[..4] != PROTOCOL_MAGIC {
        return Err(Error::Protocol(format!("bad magic {:?}", &header[..4])));
    }
    let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != PROTOCOL_VERSION {
        return Err(Error::Protocol(format!("unsupported protocol version {version}")));
    }
    let kind = MessageKind::from_u32(word(8))
        .ok_or_else(|| Error::Protocol(format!("unknown message kind {}", word(8))))?;
    let mut payload = vec![0u8; word(12) as usize];
    r.read_exact(&mut payload).map_err(|e| Error::Protocol(format!("truncated payload: {e}")))?;
    Ok((kind, payload))
}

fn f32s_to_bytes<'a>(out: &mut Vec<u8>, values: impl IntoIterator<Item = &'a f32>) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn bytes_to_f32s(bytes: &[u8]) -> Vec<f32> {
    bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()
}

/// Host-side client over an arbitrary byte stream pair.
pub struct PluginDenoiser<R: Read, W: Write> {
    reader: R,
    writer: W,
    handshake: Handshake,
    shut_down: bool,
}

impl<R: Read, W: Write> PluginDenoiser<R, W> {
    /// Sends the handshake. The plugin does not acknowledge it; a plugin
    /// that rejects the session answers the first request with ERROR.
    pub fn new(reader: R, mut writer: W, handshake: Handshake) -> Result<Self> {
        write_message(&mut writer, MessageKind::Handshake, &serde_json::to_vec(&handshake)?)?;
        Ok(Self {
            reader,
            writer,
            handshake,
            shut_down: false,
        })
    }

    pub fn shutdown(&mut self) -> Result<()> {
        if !self.shut_down {
            self.shut_down = true;
            write_message(&mut self.writer, MessageKind::Shutdown, &[])?;
        }
        Ok(())
    }
}

impl<R: Read, W: Write> Denoiser for PluginDenoiser<R, W> {
    fn predict_noise(&mut self, x_t: &[f32], condition: &ConditionChannels, t: usize) -> Result<Vec<f32>> {
        let n = self.handshake.voxel_count();
        if x_t.len() != n || condition.voxel_count() != n {
            return Err(Error::Denoiser(format!(
                "request of {} voxels does not match handshake dims {:?}",
                x_t.len(),
                self.handshake.dims
            )));
        }
        if self.shut_down {
            return Err(Error::Protocol("session already shut down".into()));
        }
        let mut payload = Vec::with_capacity(4 + 4 * (1 + CONDITION_CHANNELS) * n);
        payload.extend_from_slice(&(t as u32).to_le_bytes());
        f32s_to_bytes(&mut payload, x_t);
        f32s_to_bytes(&mut payload, condition.as_slice());
        write_message(&mut self.writer, MessageKind::StepRequest, &payload)?;
        let (kind, body) = read_message(&mut self.reader)?;
        match kind {
            MessageKind::StepResponse if body.len() == 4 * n => Ok(bytes_to_f32s(&body)),
            MessageKind::StepResponse => Err(Error::Protocol(format!(
                "response carries {} bytes, expected {}",
                body.len(),
                4 * n
            ))),
            MessageKind::Error => Err(Error::Protocol(format!(
                "plugin reported: {}",
                String::from_utf8_lossy(&body)
            ))),
            other => Err(Error::Protocol(format!("expected STEP_RESPONSE, got {other:?}"))),
        }
    }
}

/// A plugin running as a child process speaking over its stdin/stdout.
pub struct PluginProcess {
    child: Child,
    client: PluginDenoiser<BufReader<ChildStdout>, BufWriter<ChildStdin>>,
    finished: bool,
}

impl PluginProcess {
    pub fn spawn(program: &Path, args: &[String], handshake: Handshake) -> Result<Self> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Denoiser(format!("cannot start plugin {}: {e}", program.display())))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let client = match PluginDenoiser::new(BufReader::new(stdout), BufWriter::new(stdin), handshake) {
            Ok(c) => c,
            Err(e) => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(Error::Denoiser(format!("plugin handshake failed: {e}")));
            }
        };
        Ok(Self {
            child,
            client,
            finished: false,
        })
    }

    /// Send SHUTDOWN and wait for a clean exit.
    pub fn finish(mut self) -> Result<()> {
        self.finished = true;
        self.client.shutdown()?;
        let status = self
            .child
            .wait()
            .map_err(|e| Error::Denoiser(format!("waiting for plugin: {e}")))?;
        if status.success() {
            Ok(())
        } else {
            Err(Error::Denoiser(format!("plugin exited with {status}")))
        }
    }
}

impl Denoiser for PluginProcess {
    fn predict_noise(&mut self, x_t: &[f32], condition: &ConditionChannels, t: usize) -> Result<Vec<f32>> {
        self.client.predict_noise(x_t, condition, t)
    }
}

impl Drop for PluginProcess {
    fn drop(&mut self) {
        if !self.finished {
            let _ = self.client.shutdown();
            let _ = self.child.kill();
            let _ = self.child.wait();
        }
    }
}

/// Plugin side: serve one session until SHUTDOWN. Any protocol violation
/// is answered with an ERROR frame and returned as an error. Returns the
/// number of steps served.
pub fn serve<R, W, F>(mut reader: R, mut writer: W, make_denoiser: F) -> Result<usize>
where
    R: Read,
    W: Write,
    F: FnOnce(&Handshake) -> Result<Box<dyn Denoiser>>,
{
    let fail = |writer: &mut W, err: Error| {
        let _ = write_message(writer, MessageKind::Error, err.to_string().as_bytes());
        Err(err)
    };
    let handshake = match read_message(&mut reader) {
        Ok((MessageKind::Handshake, body)) => match serde_json::from_slice::<Handshake>(&body) {
            Ok(h) if h.channels == 1 + CONDITION_CHANNELS && h.voxel_count() > 0 => h,
            Ok(h) => {
                return fail(
                    &mut writer,
                    Error::Protocol(format!("unsupported handshake {h:?}")),
                )
            }
            Err(e) => return fail(&mut writer, Error::Protocol(format!("bad handshake JSON: {e}"))),
        },
        Ok((kind, _)) => return fail(&mut writer, Error::Protocol(format!("expected HANDSHAKE, got {kind:?}"))),
        Err(e) => return fail(&mut writer, e),
    };
    let mut denoiser = match make_denoiser(&handshake) {
        Ok(d) => d,
        Err(e) => return fail(&mut writer, e),
    };
    let n = handshake.voxel_count();
    let expected = 4 + 4 * (1 + CONDITION_CHANNELS) * n;
    let mut steps = 0;
    loop {
        let (kind, body) = match read_message(&mut reader) {
            Ok(m) => m,
            Err(e) => return fail(&mut writer, e),
        };
        match kind {
            MessageKind::Shutdown => return Ok(steps),
            MessageKind::StepRequest if body.len() == expected => {
                let t = u32::from_le_bytes(body[..4].try_into().unwrap()) as usize;
                if t == 0 || t > handshake.timesteps {
                    return fail(&mut writer, Error::Protocol(format!("timestep {t} outside 1..={}", handshake.timesteps)));
                }
                let image = bytes_to_f32s(&body[4..4 + 4 * n]);
                let condition = match ConditionChannels::from_raw(handshake.dims, bytes_to_f32s(&body[4 + 4 * n..])) {
                    Ok(c) => c,
                    Err(e) => return fail(&mut writer, e),
                };
                let eps = match denoiser.predict_noise(&image, &condition, t) {
                    Ok(eps) if eps.len() == n => eps,
                    Ok(eps) => {
                        return fail(&mut writer, Error::Denoiser(format!("{} outputs for {n} voxels", eps.len())))
                    }
                    Err(e) => return fail(&mut writer, e),
                };
                let mut out = Vec::with_capacity(4 * n);
                f32s_to_bytes(&mut out, &eps);
                write_message(&mut writer, MessageKind::StepResponse, &out)?;
                steps += 1;
            }
            MessageKind::StepRequest => {
                return fail(
                    &mut writer,
                    Error::Protocol(format!("STEP_REQUEST of {} bytes, expected {expected}", body.len())),
                )
            }
            other => return fail(&mut writer, Error::Protocol(format!("unexpected {other:?} message"))),
        }
    }
}
