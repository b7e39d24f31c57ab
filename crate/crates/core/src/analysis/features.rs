use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classifier::Classifier;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureLayer {
    Penultimate,
    Logits,
}

/// Writes `sample_id, predicted_label, conditioning_label, f0..` per image.
pub fn export_features<T: Scalar>(
    classifier: &Classifier<T>,
    images: &Tensor<T>,
    conditioning_labels: &[usize],
    layer: FeatureLayer,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let n = images.shape().first().copied().unwrap_or(0);
    if conditioning_labels.len() != n {
        return Err(Error::Shape(format!("{} conditioning labels for {n} images", conditioning_labels.len())));
    }
    let dims = classifier.config().resolved_fc_dims();
    let width = match layer {
        FeatureLayer::Logits => classifier.n_classes(),
        FeatureLayer::Penultimate if dims.len() >= 2 => dims[dims.len() - 2],
        FeatureLayer::Penultimate => return Err(Error::Config("classifier has a single FC layer".into())),
    };
    let csv_err = |e: csv::Error| Error::Encode(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header = vec!["sample_id".to_string(), "predicted_label".into(), "conditioning_label".into()];
    header.extend((0..width).map(|k| format!("f{k}")));
    w.write_record(&header).map_err(csv_err)?;
    if n > 0 {
        let pass = classifier.forward_eval(images)?;
        let feats = match layer {
            FeatureLayer::Logits => pass.features.logits(),
            FeatureLayer::Penultimate => pass.features.penultimate(),
        }
        .expect("layer exists");
        for (i, (pred, cond)) in pass.prediction.labels.iter().zip(conditioning_labels).enumerate() {
            let mut rec = vec![i.to_string(), pred.to_string(), cond.to_string()];
            rec.extend(feats.row(i).iter().map(|v| v.as_f64().to_string()));
            w.write_record(&rec).map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}
