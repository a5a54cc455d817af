//! Frame I/O: 8-bit RGB images in lossless PNG, named by zero-padded frame
//! index. Values map to `[0, 1]` by division by 255 on read and
//! round-to-nearest on write.

use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Rgb};

use crate::error::{Error, Result};
use crate::pipeline::FrameSequence;
use crate::tensor::FrameTensor;

/// Reads one RGB image into a `[3, H, W]` frame.
pub fn read_frame(path: impl AsRef<Path>) -> Result<FrameTensor> {
    let path = path.as_ref();
    let img = image::open(path)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            source: e,
        })?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let (w, h) = (w as usize, h as usize);
    let mut data = vec![0.0; 3 * h * w];
    for (x, y, px) in img.enumerate_pixels() {
        let (x, y) = (x as usize, y as usize);
        for c in 0..3 {
            data[c * h * w + y * w + x] = px.0[c] as f64 / 255.0;
        }
    }
    FrameTensor::from_vec(3, h, w, data)
}

/// Writes a frame as an 8-bit RGB PNG, rounding to the nearest level.
pub fn write_frame(frame: &FrameTensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if frame.channels() != 3 {
        return Err(Error::shape(format!(
            "PNG output expects 3 channels, got {}",
            frame.channels()
        )));
    }
    let (h, w) = frame.hw();
    let data = frame.tensor().data();
    let img = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        let px = |c: usize| (data[c * h * w + y * w + x] * 255.0).round().clamp(0.0, 255.0) as u8;
        Rgb([px(0), px(1), px(2)])
    });
    img.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    })
}

/// The canonical frame filename for index `i`.
pub fn frame_filename(index: usize) -> String {
    format!("{index:06}.png")
}

/// Lists the PNG frames of a directory in index order.
pub fn list_frames(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "png"))
        .collect();
    paths.sort();
    Ok(paths)
}

/// Reads every PNG of a directory as one frame sequence.
pub fn read_sequence(dir: impl AsRef<Path>, fps: f64) -> Result<FrameSequence> {
    let dir = dir.as_ref();
    let paths = list_frames(dir)?;
    if paths.is_empty() {
        return Err(Error::Precondition(format!(
            "no PNG frames found in {}",
            dir.display()
        )));
    }
    let mut frames = Vec::with_capacity(paths.len());
    for path in &paths {
        frames.push(read_frame(path)?);
    }
    FrameSequence::new(frames, fps, dir.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn write_read_round_trip_on_8bit_grid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("000000.png");
        // values already on the 8-bit grid survive the round trip exactly
        let data: Vec<f64> = (0..3 * 4 * 5).map(|i| ((i * 7) % 256) as f64 / 255.0).collect();
        let frame = FrameTensor::from_vec(3, 4, 5, data).unwrap();
        write_frame(&frame, &path).unwrap();
        let back = read_frame(&path).unwrap();
        assert_eq!(frame, back);
    }

    #[test]
    fn list_frames_sorts_by_index() {
        let dir = tempfile::tempdir().unwrap();
        let f = FrameTensor::zeros(3, 2, 2);
        for i in [3usize, 0, 11] {
            write_frame(&f, dir.path().join(frame_filename(i))).unwrap();
        }
        let names: Vec<String> = list_frames(dir.path())
            .unwrap()
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect();
        assert_eq!(names, vec!["000000.png", "000003.png", "000011.png"]);
    }
}
