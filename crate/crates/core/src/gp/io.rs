//! CSV ingestion and JSON model documents.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{Dataset, GpModel, KernelParams};

/// Reads `x1,...,xd,y[,noise_var]`.
pub fn read_dataset_csv<R: Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let names: Vec<&str> = headers.iter().collect();
    let d = names.iter().take_while(|h| h.starts_with('x')).count();
    if d == 0 {
        return Err(Error::Config("csv header must start with x1".into()));
    }
    for (i, h) in names[..d].iter().enumerate() {
        if *h != format!("x{}", i + 1) {
            return Err(Error::Config(format!("expected column x{}, found {h}", i + 1)));
        }
    }
    let has_noise = match &names[d..] {
        ["y"] => false,
        ["y", "noise_var"] => true,
        rest => return Err(Error::Config(format!("unexpected trailing columns {rest:?}"))),
    };
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut nv = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let vals: Vec<f64> = rec
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Config(format!("row {}: {e}", line + 1)))?;
        if vals.len() != names.len() {
            return Err(Error::Shape(format!("row {} has {} fields", line + 1, vals.len())));
        }
        xs.extend_from_slice(&vals[..d]);
        ys.push(vals[d]);
        if has_noise {
            nv.push(vals[d + 1]);
        }
    }
    let n = ys.len();
    let x = DMatrix::from_row_slice(n, d, &xs);
    Dataset::single(x, DVector::from_vec(ys), has_noise.then(|| DVector::from_vec(nv)))
}

pub fn write_dataset_csv<W: Write>(dataset: &Dataset, writer: W) -> Result<()> {
    if dataset.m() != 1 {
        return Err(Error::Shape("csv export supports a single output".into()));
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = (1..=dataset.d()).map(|i| format!("x{i}")).collect();
    header.push("y".into());
    if dataset.noise_var().is_some() {
        header.push("noise_var".into());
    }
    w.write_record(&header)?;
    for i in 0..dataset.n() {
        let mut row: Vec<String> = dataset.x().row(i).iter().map(|v| v.to_string()).collect();
        row.push(dataset.y()[(i, 0)].to_string());
        if let Some(nv) = dataset.noise_var() {
            row.push(nv[(i, 0)].to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Serialized GP: hyperparameters plus training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub schema: u32,
    pub kernel: String,
    pub params: KernelParams,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub noise_var: Option<Vec<f64>>,
    /// Search box recorded at fit time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<Vec<(f64, f64)>>,
}

impl ModelDocument {
    pub fn from_model(model: &GpModel, bounds: Option<Vec<(f64, f64)>>) -> Self {
        ModelDocument {
            schema: 1,
            kernel: "matern52".into(),
            params: model.params().clone(),
            x: model.train_x().row_iter().map(|r| r.iter().copied().collect()).collect(),
            y: model.train_y().iter().copied().collect(),
            noise_var: model.has_fixed_noise().then(|| model.train_noise().iter().copied().collect()),
            bounds,
        }
    }

    pub fn to_model(&self) -> Result<GpModel> {
        if self.schema != 1 {
            return Err(Error::Config(format!("unsupported model schema {}", self.schema)));
        }
        if self.kernel != "matern52" {
            return Err(Error::Config(format!("unsupported kernel {}", self.kernel)));
        }
        let d = self.params.lengthscales.len();
        let n = self.x.len();
        if self.x.iter().any(|r| r.len() != d) {
            return Err(Error::Shape("rows of x must have one entry per lengthscale".into()));
        }
        let flat: Vec<f64> = self.x.iter().flatten().copied().collect();
        let x = DMatrix::from_row_slice(n, d, &flat);
        GpModel::new(
            x,
            DVector::from_vec(self.y.clone()),
            self.noise_var.clone().map(DVector::from_vec),
            self.params.clone(),
        )
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_roundtrip_with_noise() {
        let text = "x1,x2,y,noise_var\n0.1,0.2,1.5,0.01\n0.3,0.4,-2,0.02\n";
        let ds = read_dataset_csv(text.as_bytes()).unwrap();
        assert_eq!(ds.n(), 2);
        assert_eq!(ds.d(), 2);
        assert_eq!(ds.noise_var().unwrap()[(1, 0)], 0.02);
        let mut out = Vec::new();
        write_dataset_csv(&ds, &mut out).unwrap();
        assert_eq!(read_dataset_csv(out.as_slice()).unwrap(), ds);
    }

    #[test]
    fn csv_without_noise() {
        let ds = read_dataset_csv("x1,y\n0.5,1\n".as_bytes()).unwrap();
        assert!(ds.noise_var().is_none());
    }

    #[test]
    fn bad_header() {
        assert!(read_dataset_csv("a,y\n1,2\n".as_bytes()).is_err());
        assert!(read_dataset_csv("x1,y,z\n1,2,3\n".as_bytes()).is_err());
    }

    #[test]
    fn json_roundtrip() {
        let x = DMatrix::from_row_slice(3, 1, &[0.0, 0.5, 1.0]);
        let y = DVector::from_vec(vec![1.0, 0.0, 2.0]);
        let m = GpModel::new(x, y, None, KernelParams::new(1)).unwrap();
        let doc = ModelDocument::from_model(&m, Some(vec![(0.0, 1.0)]));
        let back = ModelDocument::from_json(&doc.to_json().unwrap()).unwrap();
        assert_eq!(back, doc);
        let m2 = back.to_model().unwrap();
        let q = DMatrix::from_element(1, 1, 0.3);
        assert_eq!(m.posterior(&q, false).unwrap(), m2.posterior(&q, false).unwrap());
    }
}
