//! Binary netpbm I/O: PGM (`P5`) label rasters and PPM (`P6`) colour images,
//! 8-bit only (maxval 255).

use std::path::Path;

use super::EvalError;
use crate::image::RgbImage;
use crate::refine::LabelRaster;

struct Header {
    width: usize,
    height: usize,
    /// Offset of the first payload byte.
    data_start: usize,
}

/// Parse `magic width height maxval` followed by exactly one whitespace byte.
fn parse_header(bytes: &[u8], magic: &'static str) -> Result<Header, EvalError> {
    if bytes.len() < 2 || &bytes[..2] != magic.as_bytes() {
        let found = String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned();
        return Err(EvalError::UnsupportedFormat { expected: magic, found });
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // Whitespace and `#` comments may separate header tokens.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|b| *b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(EvalError::Format(format!("expected a number at byte {start}")));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .expect("ascii digits")
            .parse()
            .map_err(|_| EvalError::Format(format!("header number at byte {start} is too large")))?;
    }
    if fields[2] != 255 {
        return Err(EvalError::MaxVal(fields[2]));
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(EvalError::Format("missing whitespace after maxval".into())),
    }
    Ok(Header {
        width: fields[0],
        height: fields[1],
        data_start: pos,
    })
}

fn payload<'a>(bytes: &'a [u8], header: &Header, channels: usize) -> Result<&'a [u8], EvalError> {
    let need = header
        .width
        .checked_mul(header.height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| EvalError::Format("image dimensions overflow".into()))?;
    let data = &bytes[header.data_start..];
    if data.len() != need {
        return Err(EvalError::Format(format!(
            "expected {need} payload bytes for {}x{}, found {}",
            header.width,
            header.height,
            data.len()
        )));
    }
    Ok(data)
}

pub fn decode_pgm(bytes: &[u8]) -> Result<LabelRaster, EvalError> {
    let header = parse_header(bytes, "P5")?;
    let data = payload(bytes, &header, 1)?;
    Ok(LabelRaster::new(header.width, header.height, data.to_vec()).expect("payload size checked"))
}

pub fn encode_pgm(raster: &LabelRaster) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", raster.width(), raster.height()).into_bytes();
    out.extend_from_slice(raster.labels());
    out
}

pub fn decode_ppm(bytes: &[u8]) -> Result<RgbImage, EvalError> {
    let header = parse_header(bytes, "P6")?;
    let data = payload(bytes, &header, 3)?;
    Ok(RgbImage::from_raw(header.width, header.height, data.to_vec()).expect("payload size checked"))
}

pub fn encode_ppm(image: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend_from_slice(image.as_bytes());
    out
}

fn read(path: &Path) -> Result<Vec<u8>, EvalError> {
    std::fs::read(path).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), EvalError> {
    std::fs::write(path, bytes).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn at_path<T>(path: &Path, r: Result<T, EvalError>) -> Result<T, EvalError> {
    r.map_err(|e| match e {
        EvalError::Io { .. } => e,
        other => EvalError::InFile {
            path: path.to_path_buf(),
            source: Box::new(other),
        },
    })
}

pub fn load_label_raster(path: &Path) -> Result<LabelRaster, EvalError> {
    at_path(path, decode_pgm(&read(path)?))
}

/// Load a raster and check every label is at most `n_classes`.
pub fn load_label_raster_checked(path: &Path, n_classes: usize) -> Result<LabelRaster, EvalError> {
    let raster = load_label_raster(path)?;
    at_path(path, check_labels(&raster, n_classes)).map(|_| raster)
}

pub fn check_labels(raster: &LabelRaster, n_classes: usize) -> Result<(), EvalError> {
    match raster.labels().iter().position(|l| *l as usize > n_classes) {
        Some(i) => Err(EvalError::LabelOutOfRange {
            label: raster.labels()[i],
            max: n_classes,
            x: i % raster.width(),
            y: i / raster.width(),
        }),
        None => Ok(()),
    }
}

pub fn save_label_raster(path: &Path, raster: &LabelRaster) -> Result<(), EvalError> {
    write(path, &encode_pgm(raster))
}

pub fn read_ppm(path: &Path) -> Result<RgbImage, EvalError> {
    at_path(path, decode_ppm(&read(path)?))
}

pub fn write_ppm(path: &Path, image: &RgbImage) -> Result<(), EvalError> {
    write(path, &encode_ppm(image))
}
