//! Illustrations for recordings and categories.
//!
//! The default provider renders a procedural PNG offline: a seed-derived
//! background hue, an 8x8 cell pattern spelling out the 64 seed bits, and the
//! topic text in a small bitmap font. A remote txt2img service can be used
//! instead. Assets are cached under `images/` with a `manifest.json` sidecar.

mod font;

use crate::fsutil::{self, file_stem_for, sha256_hex};
use crate::provider::{self, ProviderError, RetryPolicy};
use fnv::FnvHasher;
use image::{ImageFormat, Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::hash::Hasher;
use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::time::Duration;
use thiserror::Error;

pub const DEFAULT_SIZE: u32 = 256;
pub const MIN_SIZE: u32 = 64;
pub const MAX_SIZE: u32 = 1024;
pub const DEFAULT_PRICE_PER_IMAGE: f64 = 0.001;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const IMAGES_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IllustratorError {
    #[error("invalid image request: {0}")]
    InvalidRequest(String),
    #[error("provider returned an undecodable image: {0}")]
    InvalidImage(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("image store: {0}")]
    Io(#[from] std::io::Error),
}

/// FNV-1a (64 bit) over `lowercase(topic) ++ [0x00] ++ target_id`.
pub fn variant_seed(topic: &str, target_id: &str) -> u64 {
    let mut h = FnvHasher::default();
    h.write(topic.to_lowercase().as_bytes());
    h.write(&[0]);
    h.write(target_id.as_bytes());
    h.finish()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "id", rename_all = "snake_case")]
pub enum ImageTarget {
    Recording(String),
    Category(String),
}

impl ImageTarget {
    /// Manifest key: the recording id, or `category:<name>`.
    pub fn key(&self) -> String {
        match self {
            ImageTarget::Recording(id) => id.clone(),
            ImageTarget::Category(name) => format!("category:{name}"),
        }
    }

    pub fn file_name(&self) -> String {
        match self {
            ImageTarget::Recording(id) => format!("{}.png", file_stem_for(id)),
            ImageTarget::Category(name) => format!("category_{}.png", file_stem_for(name)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageRequest {
    pub prompt: String,
    pub seed: u64,
    pub width: u32,
    pub height: u32,
    pub target: ImageTarget,
}

impl ImageRequest {
    pub fn for_recording(recording_id: &str, topic: &str, size: u32) -> Self {
        Self {
            prompt: topic.to_string(),
            seed: variant_seed(topic, recording_id),
            width: size,
            height: size,
            target: ImageTarget::Recording(recording_id.to_string()),
        }
    }

    pub fn for_category(name: &str, size: u32) -> Self {
        Self {
            prompt: name.to_string(),
            seed: variant_seed(name, &format!("category:{name}")),
            width: size,
            height: size,
            target: ImageTarget::Category(name.to_string()),
        }
    }

    pub fn validate(&self) -> Result<(), IllustratorError> {
        if self.prompt.trim().is_empty() {
            return Err(IllustratorError::InvalidRequest("empty prompt".into()));
        }
        for (what, v) in [("width", self.width), ("height", self.height)] {
            if !(MIN_SIZE..=MAX_SIZE).contains(&v) {
                return Err(IllustratorError::InvalidRequest(format!(
                    "{what} {v} outside [{MIN_SIZE}, {MAX_SIZE}]"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageProviderKind {
    Remote,
    Procedural,
}

pub trait ImageProvider: Send + Sync {
    fn kind(&self) -> ImageProviderKind;
    /// Part of the cache key, so switching providers regenerates assets.
    fn name(&self) -> &str;
    /// Encoded image bytes in any format the decoder understands.
    fn render(&self, request: &ImageRequest) -> Result<Vec<u8>, ProviderError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageAsset {
    pub target: ImageTarget,
    /// File name inside the images directory.
    pub file: String,
    pub provider: ImageProviderKind,
    pub provider_name: String,
    pub prompt: String,
    pub seed: u64,
    pub width: u32,
    pub height: u32,
    pub cache_key: String,
    pub digest: String,
}

pub fn cache_key(request: &ImageRequest, provider_name: &str) -> String {
    let material = format!(
        "{}\0{}\0{}x{}\0{}",
        request.prompt, request.seed, request.width, request.height, provider_name
    );
    sha256_hex(material.as_bytes())
}

// procedural rendering

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> Rgb<u8> {
    let c = v * s;
    let hp = (h / 60.0) % 6.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    let to = |f: f64| ((f + m) * 255.0).round() as u8;
    Rgb([to(r), to(g), to(b)])
}

fn fill_rect(img: &mut RgbImage, x0: u32, y0: u32, w: u32, h: u32, color: Rgb<u8>) {
    for y in y0..(y0 + h).min(img.height()) {
        for x in x0..(x0 + w).min(img.width()) {
            img.put_pixel(x, y, color);
        }
    }
}

fn draw_text(img: &mut RgbImage, text: &str, band_top: u32, band_h: u32, color: Rgb<u8>) {
    const ADVANCE: u32 = font::WIDTH + 1;
    let width = img.width();
    let max_chars = ((width.saturating_sub(4)) / ADVANCE) as usize;
    let chars: Vec<char> = text.to_uppercase().chars().take(max_chars).collect();
    if chars.is_empty() {
        return;
    }
    let n = chars.len() as u32;
    let scale = ((width - 4) / (n * ADVANCE)).min(band_h / (font::HEIGHT + 2)).max(1);
    let text_w = (n * ADVANCE - 1) * scale;
    let text_h = font::HEIGHT * scale;
    let x0 = (width - text_w) / 2;
    let y0 = band_top + band_h.saturating_sub(text_h) / 2;
    for (i, ch) in chars.iter().enumerate() {
        let glyph = font::glyph(*ch);
        let gx = x0 + i as u32 * ADVANCE * scale;
        for (row, bits) in glyph.iter().enumerate() {
            for col in 0..font::WIDTH {
                if bits & (1 << (font::WIDTH - 1 - col)) != 0 {
                    fill_rect(img, gx + col * scale, y0 + row as u32 * scale, scale, scale, color);
                }
            }
        }
    }
}

/// Pure function of `(prompt, seed, width, height)`. Each of the 64 seed bits
/// owns one pattern cell that never overlaps the text band, so different
/// seeds always give different pixels.
pub fn render_procedural(prompt: &str, seed: u64, width: u32, height: u32) -> RgbImage {
    let hue = (seed % 360) as f64;
    let background = hsv_to_rgb(hue, 0.35, 0.95);
    let ink = hsv_to_rgb(hue, 0.75, 0.45);
    let text_color = Rgb([24, 24, 24]);
    let mut img = RgbImage::from_pixel(width, height, background);

    let band_h = height / 4;
    let band_top = height - band_h;
    let side = width.min(band_top).saturating_sub(8);
    let cell = (side / 8).max(1);
    let grid = cell * 8;
    let gx = (width - grid) / 2;
    let gy = band_top.saturating_sub(grid) / 2;
    for bit in 0..64u32 {
        if seed >> bit & 1 == 1 {
            let (row, col) = (bit / 8, bit % 8);
            fill_rect(&mut img, gx + col * cell, gy + row * cell, cell, cell, ink);
        }
    }
    draw_text(&mut img, prompt.trim(), band_top, band_h, text_color);
    img
}

pub fn encode_png(img: &RgbImage) -> Vec<u8> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png).expect("png encoding into memory");
    out.into_inner()
}

#[derive(Debug, Default, Clone, Copy)]
pub struct ProceduralProvider;

impl ImageProvider for ProceduralProvider {
    fn kind(&self) -> ImageProviderKind {
        ImageProviderKind::Procedural
    }

    fn name(&self) -> &str {
        "procedural-v1"
    }

    fn render(&self, r: &ImageRequest) -> Result<Vec<u8>, ProviderError> {
        Ok(encode_png(&render_procedural(&r.prompt, r.seed, r.width, r.height)))
    }
}

/// POSTs `{prompt, seed, width, height}` as JSON. The answer is either image
/// bytes or JSON carrying a `url` (or `image_url`) to fetch.
pub struct RemoteImageProvider {
    endpoint: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl RemoteImageProvider {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Self {
        Self {
            endpoint: endpoint.into(),
            api_key,
            agent: provider::http_agent(timeout),
        }
    }

    fn fetch(&self, url: &str) -> Result<Vec<u8>, ProviderError> {
        let mut resp = self.agent.get(url).call().map_err(provider::transport)?;
        provider::check_status(&mut resp)?;
        read_bytes(&mut resp)
    }
}

fn read_bytes(resp: &mut ureq::http::Response<ureq::Body>) -> Result<Vec<u8>, ProviderError> {
    resp.body_mut()
        .with_config()
        .limit(32 * 1024 * 1024)
        .read_to_vec()
        .map_err(provider::transport)
}

#[derive(Deserialize)]
struct UrlReply {
    url: Option<String>,
    image_url: Option<String>,
}

impl ImageProvider for RemoteImageProvider {
    fn kind(&self) -> ImageProviderKind {
        ImageProviderKind::Remote
    }

    fn name(&self) -> &str {
        &self.endpoint
    }

    fn render(&self, r: &ImageRequest) -> Result<Vec<u8>, ProviderError> {
        let body = serde_json::json!({
            "prompt": r.prompt,
            "seed": r.seed,
            "width": r.width,
            "height": r.height,
        });
        let mut req = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(&body).map_err(provider::transport)?;
        provider::check_status(&mut resp)?;
        let is_json = resp
            .headers()
            .get("content-type")
            .and_then(|v| v.to_str().ok())
            .is_some_and(|ct| ct.starts_with("application/json"));
        let bytes = read_bytes(&mut resp)?;
        if !is_json {
            return Ok(bytes);
        }
        let reply: UrlReply =
            serde_json::from_slice(&bytes).map_err(|e| ProviderError::InvalidResponse(e.to_string()))?;
        let url = reply
            .url
            .or(reply.image_url)
            .ok_or_else(|| ProviderError::InvalidResponse("json reply without url".into()))?;
        self.fetch(&url)
    }
}

/// Provider output decoded, resized to the requested size when needed and
/// re-encoded as PNG.
pub fn normalize_image(bytes: &[u8], width: u32, height: u32) -> Result<Vec<u8>, IllustratorError> {
    let decoded = image::load_from_memory(bytes).map_err(|e| IllustratorError::InvalidImage(e.to_string()))?;
    let mut rgb = decoded.to_rgb8();
    if rgb.dimensions() != (width, height) {
        rgb = image::imageops::resize(&rgb, width, height, image::imageops::FilterType::Triangle);
    }
    Ok(encode_png(&rgb))
}

/// Calls the provider under the retry policy and returns PNG bytes.
pub fn render_request(
    request: &ImageRequest,
    provider: &dyn ImageProvider,
    retry: &RetryPolicy,
) -> Result<Vec<u8>, IllustratorError> {
    request.validate()?;
    let raw = retry.run(|_| provider.render(request))?;
    if provider.kind() == ImageProviderKind::Procedural {
        return Ok(raw);
    }
    normalize_image(&raw, request.width, request.height)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ImageManifest {
    pub format_version: u32,
    pub assets: BTreeMap<String, ImageAsset>,
}

/// The `images/` directory plus its manifest.
pub struct ImageStore {
    dir: PathBuf,
    manifest: ImageManifest,
}

impl ImageStore {
    pub fn open(dir: &Path) -> Result<Self, IllustratorError> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(MANIFEST_FILE);
        let manifest = if path.exists() {
            fsutil::read_json(&path)?
        } else {
            ImageManifest {
                format_version: IMAGES_FORMAT_VERSION,
                assets: BTreeMap::new(),
            }
        };
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest(&self) -> &ImageManifest {
        &self.manifest
    }

    pub fn asset(&self, target_key: &str) -> Option<&ImageAsset> {
        self.manifest.assets.get(target_key)
    }

    pub fn path_of(&self, asset: &ImageAsset) -> PathBuf {
        self.dir.join(&asset.file)
    }

    /// A cached asset is reused only when its key matches and the file on
    /// disk still has the recorded digest.
    pub fn lookup(&self, request: &ImageRequest, provider_name: &str) -> Option<&ImageAsset> {
        let asset = self.manifest.assets.get(&request.target.key())?;
        if asset.cache_key != cache_key(request, provider_name) {
            return None;
        }
        let bytes = std::fs::read(self.path_of(asset)).ok()?;
        (sha256_hex(&bytes) == asset.digest).then_some(asset)
    }

    pub fn insert(
        &mut self,
        request: &ImageRequest,
        provider: &dyn ImageProvider,
        png: &[u8],
    ) -> Result<ImageAsset, IllustratorError> {
        let asset = ImageAsset {
            target: request.target.clone(),
            file: request.target.file_name(),
            provider: provider.kind(),
            provider_name: provider.name().to_string(),
            prompt: request.prompt.clone(),
            seed: request.seed,
            width: request.width,
            height: request.height,
            cache_key: cache_key(request, provider.name()),
            digest: sha256_hex(png),
        };
        fsutil::write_atomic(&self.path_of(&asset), png)?;
        self.manifest.assets.insert(request.target.key(), asset.clone());
        Ok(asset)
    }

    /// Drops manifest entries (and their files) whose key is not in `keep`.
    pub fn retain(&mut self, keep: &std::collections::BTreeSet<String>) -> Result<usize, IllustratorError> {
        let stale: Vec<String> = self.manifest.assets.keys().filter(|k| !keep.contains(*k)).cloned().collect();
        for key in &stale {
            if let Some(asset) = self.manifest.assets.remove(key) {
                let path = self.dir.join(&asset.file);
                if path.exists() {
                    std::fs::remove_file(path)?;
                }
            }
        }
        Ok(stale.len())
    }

    pub fn save(&self) -> Result<(), IllustratorError> {
        fsutil::write_json(&self.dir.join(MANIFEST_FILE), &self.manifest)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Generation {
    CacheHit,
    Generated,
}

/// Cache lookup, then render and store on a miss. The manifest is not saved.
pub fn generate(
    store: &mut ImageStore,
    request: &ImageRequest,
    provider: &dyn ImageProvider,
    retry: &RetryPolicy,
) -> Result<(ImageAsset, Generation), IllustratorError> {
    request.validate()?;
    if let Some(hit) = store.lookup(request, provider.name()) {
        return Ok((hit.clone(), Generation::CacheHit));
    }
    let png = render_request(request, provider, retry)?;
    Ok((store.insert(request, provider, &png)?, Generation::Generated))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostReport {
    pub remote_images: usize,
    pub price_per_image: f64,
    pub total: f64,
}

pub fn cost_report(remote_images: usize, price_per_image: f64) -> CostReport {
    CostReport {
        remote_images,
        price_per_image,
        total: remote_images as f64 * price_per_image,
    }
}
