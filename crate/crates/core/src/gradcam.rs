//! Gradient-weighted class activation maps over the convolutional trunk.
//!
//! The heatmap for (image, task, class) is the ReLU of the feature maps of a
//! chosen conv layer, weighted per channel by the spatial mean of the
//! gradient of that class logit w.r.t. the feature maps, then max-normalized
//! and bilinearly resized to the input resolution.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{forward_pass, NetworkSpec, ParameterSet, TaskId};
use crate::tensor::Tensor;

/// A class-evidence heatmap.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Heatmap {
    /// Map at input resolution (h x w), max-normalized to 1 unless degenerate.
    pub values: Vec<f64>,
    pub height: usize,
    pub width: usize,
    /// Map at the conv layer's native resolution, before resizing.
    pub native: Vec<f64>,
    pub native_height: usize,
    pub native_width: usize,
    pub layer: String,
    pub task_id: TaskId,
    pub class_index: usize,
    /// True when the pre-normalization map was identically zero.
    pub degenerate: bool,
}

/// Compute a Grad-CAM heatmap for one image and one (task, class) query.
///
/// `layer` must name a conv layer of the trunk ("trunk.{i}"); the deepest
/// one is the conventional choice and the default used by callers.
pub fn grad_cam(
    params: &ParameterSet,
    spec: &NetworkSpec,
    image: &Tensor,
    task: &TaskId,
    class_index: usize,
    layer: &str,
) -> Result<Heatmap> {
    let head = spec.head(task)?;
    if class_index >= head.classes {
        return Err(Error::Validation(format!(
            "class index {class_index} out of range for head '{task}' with {} classes",
            head.classes
        )));
    }
    if !spec.conv_layer_names().iter().any(|n| n == layer) {
        return Err(Error::Contract(format!(
            "'{layer}' is not a convolutional trunk layer; options: {:?}",
            spec.conv_layer_names()
        )));
    }
    let batch = Tensor::stack(&[image])?;
    let mut pass = forward_pass(params, spec, &batch, true)?;
    let feature_var = *pass.conv_outputs.get(layer).expect("validated conv layer");
    let feature = pass.tape.value(feature_var).clone();
    let logits = *pass.logits.get(task).expect("head validated");
    let class_logit = pass.tape.pick(logits, class_index)?;
    let grads = pass.tape.backward(class_logit)?;
    let grad = grads.get(feature_var).ok_or_else(|| {
        Error::Contract(format!("no gradient reached layer '{layer}'"))
    })?;

    // feature shape is [1, C, H, W].
    let fs = feature.shape();
    let (c, fh, fw) = (fs[1], fs[2], fs[3]);
    let spatial = fh * fw;
    let mut native = vec![0.0; spatial];
    for ch in 0..c {
        let g = &grad[ch * spatial..(ch + 1) * spatial];
        let f = &feature.data()[ch * spatial..(ch + 1) * spatial];
        let weight: f64 = g.iter().sum::<f64>() / spatial as f64;
        for (n, fv) in native.iter_mut().zip(f) {
            *n += weight * fv;
        }
    }
    for v in native.iter_mut() {
        *v = v.max(0.0);
    }
    let peak = native.iter().cloned().fold(0.0f64, f64::max);
    let degenerate = peak <= 0.0;
    if !degenerate {
        for v in native.iter_mut() {
            *v /= peak;
        }
    }

    let [_, h, w] = spec.input_shape;
    let values = if degenerate {
        vec![0.0; h * w]
    } else {
        resize_bilinear(&native, fh, fw, h, w)
    };

    Ok(Heatmap {
        values,
        height: h,
        width: w,
        native,
        native_height: fh,
        native_width: fw,
        layer: layer.to_string(),
        task_id: task.clone(),
        class_index,
        degenerate,
    })
}

/// Bilinear resize of a single-channel map.
pub fn resize_bilinear(src: &[f64], sh: usize, sw: usize, dh: usize, dw: usize) -> Vec<f64> {
    let mut out = vec![0.0; dh * dw];
    let fy = if dh > 1 { (sh - 1) as f64 / (dh - 1) as f64 } else { 0.0 };
    let fx = if dw > 1 { (sw - 1) as f64 / (dw - 1) as f64 } else { 0.0 };
    for y in 0..dh {
        let sy = y as f64 * fy;
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(sh - 1);
        let ry = sy - y0 as f64;
        for x in 0..dw {
            let sx = x as f64 * fx;
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(sw - 1);
            let rx = sx - x0 as f64;
            out[y * dw + x] = src[y0 * sw + x0] * (1.0 - ry) * (1.0 - rx)
                + src[y0 * sw + x1] * (1.0 - ry) * rx
                + src[y1 * sw + x0] * ry * (1.0 - rx)
                + src[y1 * sw + x1] * ry * rx;
        }
    }
    out
}

/// Sidecar metadata written next to an exported heatmap image.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HeatmapSidecar {
    pub layer: String,
    pub task: TaskId,
    pub class_index: usize,
    pub degenerate: bool,
    pub fingerprint: String,
}

/// Export a heatmap as an 8-bit grayscale PNG plus a JSON sidecar.
pub fn export_heatmap(path_png: &Path, heatmap: &Heatmap, fingerprint: &str) -> Result<()> {
    if let Some(dir) = path_png.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let pixels: Vec<u8> = heatmap
        .values
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let img =
        image::GrayImage::from_raw(heatmap.width as u32, heatmap.height as u32, pixels)
            .ok_or_else(|| Error::Validation("heatmap buffer size mismatch".into()))?;
    img.save(path_png)?;
    let sidecar = HeatmapSidecar {
        layer: heatmap.layer.clone(),
        task: heatmap.task_id.clone(),
        class_index: heatmap.class_index,
        degenerate: heatmap.degenerate,
        fingerprint: fingerprint.to_string(),
    };
    let sidecar_path = path_png.with_extension("json");
    std::fs::write(sidecar_path, serde_json::to_string_pretty(&sidecar)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{init_params, HeadSpec, LayerSpec};

    /// 1x1 identity conv channel; head weight makes logit 0 the spatial mean
    /// of the feature map.
    fn mean_head_network() -> (NetworkSpec, ParameterSet) {
        let spec = NetworkSpec {
            input_shape: [1, 6, 6],
            trunk: vec![
                LayerSpec::Conv { out_channels: 1, kernel: 1, stride: 1, padding: 0 },
                LayerSpec::GlobalAvgPool,
            ],
            heads: vec![HeadSpec { task: TaskId::new("t"), classes: 2 }],
        };
        let mut params = init_params(&spec, 0).unwrap();
        params
            .set("trunk.0.weight", Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap())
            .unwrap();
        params
            .set("head.t.weight", Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap())
            .unwrap();
        (spec, params)
    }

    #[test]
    fn identity_conv_mean_head_reduces_to_relu_of_input() {
        let (spec, params) = mean_head_network();
        let mut data = vec![0.1; 36];
        data[2 * 6 + 4] = 0.9; // peak at (2, 4)
        let image = Tensor::new(vec![1, 6, 6], data.clone()).unwrap();
        let hm = grad_cam(&params, &spec, &image, &TaskId::new("t"), 0, "trunk.0").unwrap();
        assert!(!hm.degenerate);
        // Uniform positive gradient: the native map is the max-normalized
        // ReLU of the feature map (the centered input under an identity conv).
        let peak_idx = hm
            .native
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(peak_idx, 2 * 6 + 4);
        assert!((hm.native[peak_idx] - 1.0).abs() < 1e-12, "max-normalized to 1");
        for (i, v) in hm.native.iter().enumerate() {
            let fm = (data[i] - 0.5).max(0.0);
            assert!((v - fm / 0.4).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_image_through_zero_bias_network_is_degenerate() {
        let (spec, params) = mean_head_network();
        let image = Tensor::zeros(vec![1, 6, 6]);
        let hm = grad_cam(&params, &spec, &image, &TaskId::new("t"), 0, "trunk.0").unwrap();
        assert!(hm.degenerate);
        assert!(hm.values.iter().all(|&v| v == 0.0));
        assert!(hm.native.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn heatmap_is_nonnegative_and_normalized() {
        let spec = NetworkSpec::desk_scale(
            [3, 16, 16],
            vec![(TaskId::new("a"), 3), (TaskId::new("b"), 4)],
        );
        let params = init_params(&spec, 11).unwrap();
        let data: Vec<f64> = (0..3 * 16 * 16).map(|i| (i % 23) as f64 / 23.0).collect();
        let image = Tensor::new(vec![3, 16, 16], data).unwrap();
        let layer = spec.conv_layer_names().last().unwrap().clone();
        let hm = grad_cam(&params, &spec, &image, &TaskId::new("b"), 2, &layer).unwrap();
        assert!(hm.native.iter().all(|&v| v >= 0.0));
        assert!(hm.values.iter().all(|&v| v >= 0.0));
        if !hm.degenerate {
            let peak = hm.native.iter().cloned().fold(0.0f64, f64::max);
            assert!((peak - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn scaling_feature_maps_preserves_argmax_location() {
        // Scaling the conv weights scales every trunk feature map by the
        // same positive constant.
        let (spec, params) = mean_head_network();
        let mut scaled = params.clone();
        scaled
            .set("trunk.0.weight", Tensor::new(vec![1, 1, 1, 1], vec![0.37]).unwrap())
            .unwrap();
        let mut data = vec![0.2; 36];
        data[7] = 0.8;
        data[30] = 0.7;
        let image = Tensor::new(vec![1, 6, 6], data.clone()).unwrap();
        let t = TaskId::new("t");
        let h1 = grad_cam(&params, &spec, &image, &t, 0, "trunk.0").unwrap();
        let h2 = grad_cam(&scaled, &spec, &image, &t, 0, "trunk.0").unwrap();
        let argmax = |v: &[f64]| {
            v.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0
        };
        assert_eq!(argmax(&h1.native), argmax(&h2.native));
        assert_eq!(argmax(&h1.native), 7);
    }

    #[test]
    fn grad_cam_never_mutates_parameters() {
        let (spec, params) = mean_head_network();
        let before = params.value_hash();
        let image = Tensor::filled(vec![1, 6, 6], 0.3);
        let _ = grad_cam(&params, &spec, &image, &TaskId::new("t"), 1, "trunk.0").unwrap();
        assert_eq!(params.value_hash(), before);
    }

    #[test]
    fn non_conv_layer_is_contract_error() {
        let (spec, params) = mean_head_network();
        let image = Tensor::filled(vec![1, 6, 6], 0.3);
        let err = grad_cam(&params, &spec, &image, &TaskId::new("t"), 0, "trunk.1");
        assert!(matches!(err, Err(crate::error::Error::Contract(_))));
        let err = grad_cam(&params, &spec, &image, &TaskId::new("t"), 9, "trunk.0");
        assert!(matches!(err, Err(crate::error::Error::Validation(_))));
    }

    #[test]
    fn bilinear_resize_preserves_constants_and_corners() {
        let src = vec![1.0, 2.0, 3.0, 4.0];
        let out = resize_bilinear(&src, 2, 2, 5, 5);
        assert_eq!(out[0], 1.0);
        assert_eq!(out[4], 2.0);
        assert_eq!(out[20], 3.0);
        assert_eq!(out[24], 4.0);
        let flat = resize_bilinear(&vec![0.7; 9], 3, 3, 7, 7);
        assert!(flat.iter().all(|&v| (v - 0.7).abs() < 1e-12));
    }

    #[test]
    fn export_writes_png_and_sidecar() {
        let (spec, params) = mean_head_network();
        let mut data = vec![0.1; 36];
        data[10] = 0.9;
        let image = Tensor::new(vec![1, 6, 6], data).unwrap();
        let hm = grad_cam(&params, &spec, &image, &TaskId::new("t"), 0, "trunk.0").unwrap();
        let dir = std::env::temp_dir().join(format!("sall-cam-{}", std::process::id()));
        let png = dir.join("map.png");
        export_heatmap(&png, &hm, "fpX").unwrap();
        assert!(png.exists());
        let sidecar: HeatmapSidecar =
            serde_json::from_str(&std::fs::read_to_string(png.with_extension("json")).unwrap())
                .unwrap();
        assert_eq!(sidecar.layer, "trunk.0");
        assert_eq!(sidecar.fingerprint, "fpX");
        assert!(!sidecar.degenerate);
        std::fs::remove_dir_all(&dir).ok();
    }
}
