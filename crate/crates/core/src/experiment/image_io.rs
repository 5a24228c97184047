//! Binary PGM (P5) images and `x,y,arm,value` tables.
//!
//! Images are written as 16-bit (maxval 65535) with values round(65535·t).
//! Reading accepts 8- and 16-bit P5 files and divides by maxval; header
//! parsing is delegated to the `image` crate, samples are read here so that
//! values above maxval are reported instead of silently saturated.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use image::codecs::pnm::{GraymapHeader, PnmDecoder, PnmEncoder, PnmHeader, PnmSubtype, SampleEncoding};
use image::ExtendedColorType;

use crate::error::{Error, Result};
use crate::image::{Dims, Image};
use crate::measurement::MeasurementModel;
use crate::optics::Arm;
use crate::stats::ArmImages;

fn image_error(path: &Path, message: impl Into<String>) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Writes `img` (values in [0, 1]) as a 16-bit binary PGM.
pub fn save_image(path: &Path, img: &Image) -> Result<()> {
    if let Some((i, v)) = img.data().iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Range(format!("pixel {i} = {v} outside [0, 1]")));
    }
    let samples: Vec<u16> = img.data().iter().map(|v| (v * 65535.0).round() as u16).collect();
    let mut out = BufWriter::new(File::create(path)?);
    let header = PnmHeader::from(GraymapHeader {
        encoding: SampleEncoding::Binary,
        width: img.width() as u32,
        height: img.height() as u32,
        maxwhite: 65535,
    });
    PnmEncoder::new(&mut out)
        .with_header(header)
        .encode(&samples[..], img.width() as u32, img.height() as u32, ExtendedColorType::L16)
        .map_err(|e| image_error(path, e.to_string()))?;
    out.flush()?;
    Ok(())
}

/// Writes `img` scaled by its maximum (all-zero images stay zero).
pub fn save_normalized(path: &Path, img: &Image) -> Result<()> {
    let max = img.data().iter().cloned().fold(0.0, f64::max);
    let scaled = Image::from_fn(img.dims(), |x, y| {
        if max > 0.0 {
            (img.get(x, y) / max).clamp(0.0, 1.0)
        } else {
            0.0
        }
    });
    save_image(path, &scaled)
}

/// Reads an 8- or 16-bit binary PGM into [0, 1].
pub fn load_image(path: &Path) -> Result<Image> {
    let reader = BufReader::new(File::open(path)?);
    let decoder = PnmDecoder::new(reader).map_err(|e| image_error(path, e.to_string()))?;
    let (mut reader, header) = decoder.into_inner();
    if header.subtype() != PnmSubtype::Graymap(SampleEncoding::Binary) {
        return Err(image_error(path, "only binary graymaps (P5) are supported"));
    }
    let (w, h, maxval) = (header.width() as usize, header.height() as usize, header.maximal_sample());
    let dims = Dims::new(w, h).map_err(|e| image_error(path, e.to_string()))?;
    let wide = maxval > 255;
    let mut raw = vec![0u8; dims.len() * if wide { 2 } else { 1 }];
    reader
        .read_exact(&mut raw)
        .map_err(|e| image_error(path, format!("truncated pixel data: {e}")))?;
    let samples: Vec<u32> = if wide {
        raw.chunks_exact(2).map(|c| u32::from(u16::from_be_bytes([c[0], c[1]]))).collect()
    } else {
        raw.iter().map(|b| u32::from(*b)).collect()
    };
    if let Some((i, s)) = samples.iter().enumerate().find(|(_, s)| **s > maxval) {
        return Err(Error::Range(format!(
            "{}: sample {s} at pixel {i} exceeds maxval {maxval}",
            path.display()
        )));
    }
    Image::new(dims, samples.iter().map(|s| f64::from(*s) / f64::from(maxval)).collect())
}

/// Per-arm images as CSV rows `x,y,arm,value`.
pub fn write_arm_csv<W: Write>(out: W, images: &ArmImages) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["x", "y", "arm", "value"]).map_err(csv_error)?;
    let d = images.dims;
    for arm in Arm::ALL {
        let data = images.arm(arm);
        for y in 0..d.height {
            for x in 0..d.width {
                w.write_record(&[
                    x.to_string(),
                    y.to_string(),
                    arm.label().to_string(),
                    data[d.index(x, y)].to_string(),
                ])
                .map_err(csv_error)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Sensor readouts of all arms as `x,y,arm,value` on each arm's sensor grid.
pub fn write_readouts_csv<W: Write>(out: W, model: &MeasurementModel, readouts: &[Vec<f64>; 3]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["x", "y", "arm", "value"]).map_err(csv_error)?;
    for arm in Arm::ALL {
        let d = model.sensors(arm).sensor_dims();
        let data = &readouts[arm.index()];
        if data.len() != d.len() {
            return Err(Error::DimensionMismatch {
                context: "sensor readouts",
                expected: d.len().to_string(),
                got: data.len().to_string(),
            });
        }
        for y in 0..d.height {
            for x in 0..d.width {
                w.write_record(&[
                    x.to_string(),
                    y.to_string(),
                    arm.label().to_string(),
                    data[d.index(x, y)].to_string(),
                ])
                .map_err(csv_error)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Inverse of [`write_readouts_csv`]. Arms absent from the file stay NaN;
/// every listed arm must be complete.
pub fn read_readouts_csv<R: Read>(input: R, model: &MeasurementModel) -> Result<[Vec<f64>; 3]> {
    let dims = Arm::ALL.map(|a| model.sensors(a).sensor_dims());
    let mut out = dims.map(|d| vec![f64::NAN; d.len()]);
    let mut seen = [0usize; 3];
    let mut r = csv::Reader::from_reader(input);
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_error)?;
        let line = i + 2;
        let bad = |msg: String| Error::Config { line, message: msg };
        if rec.len() != 4 {
            return Err(bad(format!("expected 4 fields, got {}", rec.len())));
        }
        let int = |k: usize| {
            rec[k]
                .trim()
                .parse::<usize>()
                .map_err(|_| bad(format!("`{}` is not an index", &rec[k])))
        };
        let (x, y) = (int(0)?, int(1)?);
        let arm = Arm::from_label(int(2)?)?;
        let value: f64 = rec[3]
            .trim()
            .parse()
            .map_err(|_| bad(format!("`{}` is not a number", &rec[3])))?;
        let d = dims[arm.index()];
        if x >= d.width || y >= d.height {
            return Err(bad(format!("sensor ({x}, {y}) outside the {d} grid of arm {arm}")));
        }
        let slot = &mut out[arm.index()][d.index(x, y)];
        if !slot.is_nan() {
            return Err(bad(format!("sensor ({x}, {y}) of arm {arm} listed twice")));
        }
        *slot = value;
        seen[arm.index()] += 1;
    }
    for arm in Arm::ALL {
        let k = arm.index();
        if seen[k] != 0 && seen[k] != dims[k].len() {
            return Err(Error::DimensionMismatch {
                context: "sensor readouts",
                expected: dims[k].len().to_string(),
                got: seen[k].to_string(),
            });
        }
    }
    Ok(out)
}

pub(crate) fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}
