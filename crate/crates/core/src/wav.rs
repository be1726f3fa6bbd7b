//! RIFF/WAVE PCM-16 reading and writing.
//!
//! The recording identifier travels inside the file as the `ICOP`
//! (copyright) entry of a `LIST`/`INFO` chunk, so it survives renames.

use std::fmt;
use std::str::FromStr;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

const WAVE_FORMAT_PCM: u16 = 0x0001;
const WAVE_FORMAT_EXTENSIBLE: u16 = 0xFFFE;
// KSDATAFORMAT_SUBTYPE_PCM, bytes 2.. of the GUID after the format tag
const PCM_SUBFORMAT_TAIL: [u8; 14] = [
    0x00, 0x00, 0x00, 0x00, 0x10, 0x00, 0x80, 0x00, 0x00, 0xAA, 0x00, 0x38, 0x9B, 0x71,
];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WavError {
    #[error("not a RIFF/WAVE file")]
    NotRiff,
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("file truncated: {0}")]
    TruncatedFile(String),
    #[error("bad chunk size: {0}")]
    BadChunkSize(String),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ClipError {
    #[error("a clip needs at least one channel")]
    NoChannels,
    #[error("channel lengths differ")]
    RaggedChannels,
    #[error("sample rate must be positive")]
    ZeroSampleRate,
}

/// Decoded multichannel PCM audio.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AudioClip {
    sample_rate: u32,
    channels: Vec<Vec<i16>>,
}

impl AudioClip {
    pub fn new(sample_rate: u32, channels: Vec<Vec<i16>>) -> Result<AudioClip, ClipError> {
        if sample_rate == 0 {
            return Err(ClipError::ZeroSampleRate);
        }
        let first = channels.first().ok_or(ClipError::NoChannels)?.len();
        if channels.iter().any(|c| c.len() != first) {
            return Err(ClipError::RaggedChannels);
        }
        Ok(AudioClip { sample_rate, channels })
    }

    pub fn mono(sample_rate: u32, samples: Vec<i16>) -> AudioClip {
        AudioClip::new(sample_rate, vec![samples]).expect("single channel is always valid")
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn channels(&self) -> &[Vec<i16>] {
        &self.channels
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    /// Samples per channel.
    pub fn frames(&self) -> usize {
        self.channels[0].len()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.frames() as f64 / self.sample_rate as f64
    }

    /// Applies `f` to every channel, keeping the sample rate.
    pub fn map_channels<F>(&self, f: F) -> AudioClip
    where
        F: FnMut(&Vec<i16>) -> Vec<i16>,
    {
        AudioClip::new(self.sample_rate, self.channels.iter().map(f).collect())
            .expect("channel map must preserve equal lengths")
    }

    pub fn into_channels(self) -> Vec<Vec<i16>> {
        self.channels
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("content id must be 32 lowercase hex digits, got `{0}`")]
pub struct InvalidContentId(pub String);

/// RFC 4122 UUID rendered as 32 lowercase hex digits.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ContentId(String);

impl ContentId {
    pub fn parse(text: &str) -> Result<ContentId, InvalidContentId> {
        if is_content_id(text) {
            Ok(ContentId(text.to_string()))
        } else {
            Err(InvalidContentId(text.to_string()))
        }
    }

    /// A fresh version-4 UUID drawn from `rng`.
    pub fn generate<R: RngCore + ?Sized>(rng: &mut R) -> ContentId {
        let mut bytes = [0u8; 16];
        rng.fill_bytes(&mut bytes);
        let uuid = uuid::Builder::from_random_bytes(bytes).into_uuid();
        ContentId(uuid.simple().to_string())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

/// Shorthand for [`ContentId::generate`].
pub fn new_content_id<R: RngCore + ?Sized>(rng: &mut R) -> ContentId {
    ContentId::generate(rng)
}

pub fn is_content_id(text: &str) -> bool {
    text.len() == 32 && text.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'))
}

impl fmt::Display for ContentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for ContentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ContentId({})", self.0)
    }
}

impl FromStr for ContentId {
    type Err = InvalidContentId;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ContentId::parse(s)
    }
}

impl TryFrom<String> for ContentId {
    type Error = InvalidContentId;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        ContentId::parse(&s)
    }
}

impl From<ContentId> for String {
    fn from(c: ContentId) -> String {
        c.0
    }
}

struct Chunk<'a> {
    id: [u8; 4],
    body: &'a [u8],
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Splits the RIFF body into chunks. The `data` chunk must be complete;
/// a short trailing chunk of any other kind is a size error.
fn chunks(bytes: &[u8]) -> Result<Vec<Chunk<'_>>, WavError> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(WavError::NotRiff);
    }
    let mut out = Vec::new();
    let mut pos = 12;
    while pos < bytes.len() {
        if bytes.len() - pos < 8 {
            // stray pad byte or partial header at EOF
            if out.iter().any(|c: &Chunk| &c.id == b"data") {
                break;
            }
            return Err(WavError::TruncatedFile("partial chunk header".into()));
        }
        let mut id = [0u8; 4];
        id.copy_from_slice(&bytes[pos..pos + 4]);
        let size = u32_at(bytes, pos + 4) as usize;
        let start = pos + 8;
        let end = start.checked_add(size).ok_or_else(|| WavError::BadChunkSize("overflow".into()))?;
        if end > bytes.len() {
            if &id == b"data" {
                return Err(WavError::TruncatedFile(format!(
                    "data chunk declares {} bytes, {} present",
                    size,
                    bytes.len() - start
                )));
            }
            return Err(WavError::BadChunkSize(format!(
                "chunk {} declares {} bytes past end of file",
                String::from_utf8_lossy(&id),
                end - bytes.len()
            )));
        }
        out.push(Chunk { id, body: &bytes[start..end] });
        pos = end + (size & 1);
    }
    Ok(out)
}

struct Format {
    channels: u16,
    sample_rate: u32,
}

fn parse_fmt(body: &[u8]) -> Result<Format, WavError> {
    if body.len() < 16 {
        return Err(WavError::BadChunkSize(format!("fmt chunk of {} bytes", body.len())));
    }
    let tag = u16_at(body, 0);
    let channels = u16_at(body, 2);
    let sample_rate = u32_at(body, 4);
    let block_align = u16_at(body, 12);
    let bits = u16_at(body, 14);
    let pcm = match tag {
        WAVE_FORMAT_PCM => true,
        WAVE_FORMAT_EXTENSIBLE => body.len() >= 40 && body[26..40] == PCM_SUBFORMAT_TAIL,
        _ => false,
    };
    if !pcm {
        return Err(WavError::UnsupportedFormat(format!("format tag {tag:#06x}")));
    }
    if bits != 16 {
        return Err(WavError::UnsupportedFormat(format!("{bits}-bit samples")));
    }
    if channels == 0 || sample_rate == 0 {
        return Err(WavError::UnsupportedFormat("zero channels or sample rate".into()));
    }
    if block_align != channels * 2 {
        return Err(WavError::BadChunkSize(format!("block align {block_align}")));
    }
    Ok(Format { channels, sample_rate })
}

fn info_content_id(list_body: &[u8]) -> Option<ContentId> {
    info_entries(list_body)?
        .into_iter()
        .filter(|(id, _)| id == b"ICOP")
        .filter_map(|(_, value)| {
            let text = std::str::from_utf8(value).ok()?.trim_end_matches('\0').trim();
            ContentId::parse(text).ok()
        })
        .next_back()
}

/// Sub-chunks of a `LIST` body of type `INFO`; `None` for other list types.
fn info_entries(list_body: &[u8]) -> Option<Vec<([u8; 4], &[u8])>> {
    if list_body.len() < 4 || &list_body[0..4] != b"INFO" {
        return None;
    }
    let mut out = Vec::new();
    let mut pos = 4;
    while pos + 8 <= list_body.len() {
        let mut id = [0u8; 4];
        id.copy_from_slice(&list_body[pos..pos + 4]);
        let size = u32_at(list_body, pos + 4) as usize;
        let start = pos + 8;
        let end = (start + size).min(list_body.len());
        out.push((id, &list_body[start..end]));
        pos = start + size + (size & 1);
    }
    Some(out)
}

/// Parses a PCM-16 WAV file, returning the clip and any embedded content id.
pub fn read_wav(bytes: &[u8]) -> Result<(AudioClip, Option<ContentId>), WavError> {
    let chunks = chunks(bytes)?;
    let mut format = None;
    let mut data = None;
    let mut content_id = None;
    for chunk in &chunks {
        match &chunk.id {
            b"fmt " => format = Some(parse_fmt(chunk.body)?),
            b"data" => data = Some(chunk.body),
            b"LIST" => {
                if let Some(id) = info_content_id(chunk.body) {
                    content_id = Some(id);
                }
            }
            _ => {}
        }
    }
    let format = format.ok_or_else(|| WavError::UnsupportedFormat("missing fmt chunk".into()))?;
    let data = data.ok_or_else(|| WavError::TruncatedFile("missing data chunk".into()))?;
    let nch = format.channels as usize;
    if data.len() % (2 * nch) != 0 {
        return Err(WavError::BadChunkSize(format!(
            "data chunk of {} bytes is not a whole number of {}-channel frames",
            data.len(),
            nch
        )));
    }
    let frames = data.len() / (2 * nch);
    let mut channels = vec![Vec::with_capacity(frames); nch];
    for frame in data.chunks_exact(2 * nch) {
        for (ch, s) in channels.iter_mut().zip(frame.chunks_exact(2)) {
            ch.push(i16::from_le_bytes([s[0], s[1]]));
        }
    }
    let clip = AudioClip::new(format.sample_rate, channels).expect("validated format");
    Ok((clip, content_id))
}

fn push_chunk(out: &mut Vec<u8>, id: &[u8; 4], body: &[u8]) {
    out.extend_from_slice(id);
    out.extend_from_slice(&(body.len() as u32).to_le_bytes());
    out.extend_from_slice(body);
    if body.len() % 2 == 1 {
        out.push(0);
    }
}

fn icop_list(id: &ContentId) -> Vec<u8> {
    let mut value = id.as_str().as_bytes().to_vec();
    value.push(0);
    let mut list = b"INFO".to_vec();
    push_chunk(&mut list, b"ICOP", &value);
    list
}

fn wrap_riff(body: Vec<u8>) -> Vec<u8> {
    let mut out = Vec::with_capacity(body.len() + 12);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(body.len() as u32 + 4).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(&body);
    out
}

pub fn write_wav(clip: &AudioClip, content_id: Option<&ContentId>) -> Vec<u8> {
    let nch = clip.num_channels() as u16;
    let mut fmt = Vec::with_capacity(16);
    fmt.extend_from_slice(&WAVE_FORMAT_PCM.to_le_bytes());
    fmt.extend_from_slice(&nch.to_le_bytes());
    fmt.extend_from_slice(&clip.sample_rate.to_le_bytes());
    fmt.extend_from_slice(&(clip.sample_rate * nch as u32 * 2).to_le_bytes());
    fmt.extend_from_slice(&(nch * 2).to_le_bytes());
    fmt.extend_from_slice(&16u16.to_le_bytes());

    let mut data = Vec::with_capacity(clip.frames() * nch as usize * 2);
    for i in 0..clip.frames() {
        for ch in &clip.channels {
            data.extend_from_slice(&ch[i].to_le_bytes());
        }
    }

    let mut body = Vec::new();
    push_chunk(&mut body, b"fmt ", &fmt);
    push_chunk(&mut body, b"data", &data);
    if let Some(id) = content_id {
        push_chunk(&mut body, b"LIST", &icop_list(id));
    }
    wrap_riff(body)
}

/// Rewrites the chunk list with every `ICOP` entry dropped, then appends
/// `extra` (if any) as a fresh `LIST`/`INFO` chunk. Other chunks are kept
/// byte-for-byte.
fn rewrite_icop(wav: &[u8], replacement: Option<&ContentId>) -> Result<Vec<u8>, WavError> {
    read_wav(wav)?;
    let mut body = Vec::with_capacity(wav.len() + 48);
    for chunk in chunks(wav)? {
        if &chunk.id == b"LIST" {
            if let Some(entries) = info_entries(chunk.body) {
                let kept: Vec<_> = entries.into_iter().filter(|(id, _)| id != b"ICOP").collect();
                if kept.is_empty() {
                    continue;
                }
                let mut list = b"INFO".to_vec();
                for (id, value) in kept {
                    push_chunk(&mut list, &id, value);
                }
                push_chunk(&mut body, b"LIST", &list);
                continue;
            }
        }
        push_chunk(&mut body, &chunk.id, chunk.body);
    }
    if let Some(id) = replacement {
        push_chunk(&mut body, b"LIST", &icop_list(id));
    }
    Ok(wrap_riff(body))
}

/// Embeds `content_id`, replacing any id already present. Samples are untouched.
pub fn embed_content_id(wav: &[u8], content_id: &ContentId) -> Result<Vec<u8>, WavError> {
    rewrite_icop(wav, Some(content_id))
}

/// Removes any embedded content id.
pub fn strip_content_id(wav: &[u8]) -> Result<Vec<u8>, WavError> {
    rewrite_icop(wav, None)
}
