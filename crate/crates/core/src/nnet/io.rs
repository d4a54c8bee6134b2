//! Network-spec JSON files and the flat binary parameter format.
//!
//! Parameter files: magic "SYLV", version u32, trainable-layer count u32,
//! then two records per layer ("<name>.weight", "<name>.bias"). Each record
//! is name length + name bytes + dims count + dims, all little-endian u32,
//! followed by the row-major values as little-endian f64. Conv weights are
//! stored in `(c_o, c_i, f_h, f_w)` tensor form.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nnet::{LayerKind, Network, NetworkSpec};
use crate::patches::{flatten_weight, reshape_weight};

const MAGIC: &[u8; 4] = b"SYLV";
const VERSION: u32 = 1;

/// Writes a spec as pretty-printed JSON.
pub fn save_network_spec(spec: &NetworkSpec, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(spec)
        .map_err(|e| Error::Format(format!("spec serialization failed: {e}")))?;
    std::fs::write(path, json)?;
    Ok(())
}

/// Reads and validates a JSON spec.
pub fn load_network_spec(path: &Path) -> Result<NetworkSpec> {
    let text = std::fs::read_to_string(path)?;
    let spec: NetworkSpec = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    spec.layer_input_dims()?;
    Ok(spec)
}

fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_record(out: &mut Vec<u8>, name: &str, dims: &[u32], values: &[f64]) {
    push_u32(out, name.len() as u32);
    out.extend_from_slice(name.as_bytes());
    push_u32(out, dims.len() as u32);
    for &d in dims {
        push_u32(out, d);
    }
    for &v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Saves all trainable parameters.
pub fn save_params(net: &Network, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    push_u32(&mut out, VERSION);
    push_u32(&mut out, net.params().len() as u32);

    let trainables = net
        .spec()
        .layers
        .iter()
        .filter(|l| l.kind.is_trainable())
        .zip(net.params());
    for (layer, p) in trainables {
        match &layer.kind {
            LayerKind::Conv2D { c_o, f_h, f_w, .. } => {
                let c_i = p.weight.cols() / (f_h * f_w);
                let t = reshape_weight(&p.weight, c_i, *f_h, *f_w)?;
                let dims = [*c_o as u32, c_i as u32, *f_h as u32, *f_w as u32];
                push_record(&mut out, &format!("{}.weight", layer.name), &dims, t.data());
            }
            LayerKind::Dense { .. } => {
                let dims = [p.weight.rows() as u32, p.weight.cols() as u32];
                push_record(
                    &mut out,
                    &format!("{}.weight", layer.name),
                    &dims,
                    p.weight.data(),
                );
            }
            _ => unreachable!("only trainable layers carry parameters"),
        }
        push_record(
            &mut out,
            &format!("{}.bias", layer.name),
            &[p.bias.len() as u32],
            &p.bias,
        );
    }

    let mut file = std::fs::File::create(path)?;
    file.write_all(&out)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: String,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format(format!(
                "{}: unexpected end of file at byte {}",
                self.path, self.pos
            )));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f64s(&mut self, count: usize) -> Result<Vec<f64>> {
        let b = self.take(count * 8)?;
        Ok(b.chunks_exact(8)
            .map(|c| f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]))
            .collect())
    }

    fn record(&mut self) -> Result<(String, Vec<u32>, Vec<f64>)> {
        let name_len = self.u32()? as usize;
        let name = String::from_utf8(self.take(name_len)?.to_vec())
            .map_err(|e| Error::Format(format!("{}: bad record name: {e}", self.path)))?;
        let dims_count = self.u32()? as usize;
        let mut dims = Vec::with_capacity(dims_count);
        for _ in 0..dims_count {
            dims.push(self.u32()?);
        }
        let len = dims.iter().map(|&d| d as usize).product::<usize>();
        let values = self.f64s(len)?;
        Ok((name, dims, values))
    }
}

/// Loads parameters into a network of matching architecture; every
/// trainable layer must find records of its spec-derived shapes.
pub fn load_params(net: &mut Network, path: &Path) -> Result<()> {
    let bytes = std::fs::read(path)?;
    let mut reader = Reader {
        bytes: &bytes,
        pos: 0,
        path: path.display().to_string(),
    };
    if reader.take(4)? != MAGIC {
        return Err(Error::Format(format!(
            "{}: not a parameter file (bad magic)",
            path.display()
        )));
    }
    let version = reader.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported version {version}",
            path.display()
        )));
    }
    let count = reader.u32()? as usize;
    if count != net.params().len() {
        return Err(Error::Format(format!(
            "{}: file has {count} layers, network has {}",
            path.display(),
            net.params().len()
        )));
    }

    let mut records: HashMap<String, (Vec<u32>, Vec<f64>)> = HashMap::new();
    for _ in 0..2 * count {
        let (name, dims, values) = reader.record()?;
        if records.insert(name.clone(), (dims, values)).is_some() {
            return Err(Error::Format(format!(
                "{}: duplicate record '{name}'",
                path.display()
            )));
        }
    }
    if reader.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{}: {} trailing bytes",
            path.display(),
            bytes.len() - reader.pos
        )));
    }

    let layers: Vec<(String, LayerKind)> = net
        .spec()
        .layers
        .iter()
        .filter(|l| l.kind.is_trainable())
        .map(|l| (l.name.clone(), l.kind.clone()))
        .collect();
    for (name, kind) in layers {
        let (wdims, wvalues) = records
            .remove(&format!("{name}.weight"))
            .ok_or_else(|| Error::Format(format!("{}: no weights for layer '{name}'", path.display())))?;
        let (bdims, bvalues) = records
            .remove(&format!("{name}.bias"))
            .ok_or_else(|| Error::Format(format!("{}: no biases for layer '{name}'", path.display())))?;

        let expected = net.param_for(&name).expect("trainable layer");
        let weight = match &kind {
            LayerKind::Conv2D { c_o, f_h, f_w, .. } => {
                let c_i = expected.weight.cols() / (f_h * f_w);
                let want = [*c_o as u32, c_i as u32, *f_h as u32, *f_w as u32];
                if wdims != want {
                    return Err(Error::Format(format!(
                        "{}: layer '{name}' weight dims {wdims:?}, expected {want:?}",
                        path.display()
                    )));
                }
                let t = crate::patches::Tensor4::from_vec((*c_o, c_i, *f_h, *f_w), wvalues)?;
                flatten_weight(&t)
            }
            LayerKind::Dense { .. } => {
                let want = [expected.weight.rows() as u32, expected.weight.cols() as u32];
                if wdims != want {
                    return Err(Error::Format(format!(
                        "{}: layer '{name}' weight dims {wdims:?}, expected {want:?}",
                        path.display()
                    )));
                }
                Matrix::from_vec(expected.weight.rows(), expected.weight.cols(), wvalues)?
            }
            _ => unreachable!(),
        };
        if bdims != [expected.bias.len() as u32] {
            return Err(Error::Format(format!(
                "{}: layer '{name}' bias dims {bdims:?}, expected [{}]",
                path.display(),
                expected.bias.len()
            )));
        }
        net.install_weights(&name, weight, bvalues)?;
    }

    if let Some(name) = records.keys().next() {
        return Err(Error::Format(format!(
            "{}: record '{name}' matches no trainable layer",
            path.display()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::test_support::{randomize_params, toy_cnn};
    use crate::nnet::small_cnn;

    #[test]
    fn spec_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("arch.json");
        let spec = small_cnn((8, 8, 1), 3);
        save_network_spec(&spec, &path).unwrap();
        let back = load_network_spec(&path).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn spec_load_rejects_bad_json_and_bad_chain() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("arch.json");
        std::fs::write(&path, "{not json").unwrap();
        assert!(matches!(load_network_spec(&path), Err(Error::Format(_))));

        let mut spec = small_cnn((8, 8, 1), 3);
        spec.num_classes = 7;
        let json = serde_json::to_string(&spec).unwrap();
        std::fs::write(&path, json).unwrap();
        assert!(matches!(load_network_spec(&path), Err(Error::Config(_))));

        assert!(matches!(
            load_network_spec(&dir.path().join("missing.json")),
            Err(Error::Io(_))
        ));
    }

    #[test]
    fn params_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.bin");
        let mut net = Network::new(toy_cnn()).unwrap();
        randomize_params(&mut net, 80);
        save_params(&net, &path).unwrap();

        let mut fresh = Network::new(toy_cnn()).unwrap();
        load_params(&mut fresh, &path).unwrap();
        assert_eq!(fresh.params(), net.params());
    }

    #[test]
    fn params_file_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.bin");
        let net = Network::new(toy_cnn()).unwrap();
        save_params(&net, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();

        assert_eq!(&bytes[0..4], b"SYLV");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 3);
        // First record: "c1.weight" with conv dims (3, 2, 3, 3).
        let name_len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        assert_eq!(&bytes[16..16 + name_len], b"c1.weight");
        let mut at = 16 + name_len;
        let dims_count = u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        assert_eq!(dims_count, 4);
        at += 4;
        let dims: Vec<u32> = (0..4)
            .map(|i| u32::from_le_bytes(bytes[at + 4 * i..at + 4 * i + 4].try_into().unwrap()))
            .collect();
        assert_eq!(dims, vec![3, 2, 3, 3]);
    }

    #[test]
    fn params_load_rejects_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.bin");
        let mut net = Network::new(toy_cnn()).unwrap();
        randomize_params(&mut net, 81);
        save_params(&net, &path).unwrap();
        let good = std::fs::read(&path).unwrap();

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        std::fs::write(&path, &bad_magic).unwrap();
        assert!(matches!(load_params(&mut net, &path), Err(Error::Format(_))));

        let mut bad_version = good.clone();
        bad_version[4] = 9;
        std::fs::write(&path, &bad_version).unwrap();
        assert!(matches!(load_params(&mut net, &path), Err(Error::Format(_))));

        let truncated = &good[..good.len() - 5];
        std::fs::write(&path, truncated).unwrap();
        assert!(matches!(load_params(&mut net, &path), Err(Error::Format(_))));

        let mut trailing = good.clone();
        trailing.push(0);
        std::fs::write(&path, &trailing).unwrap();
        assert!(matches!(load_params(&mut net, &path), Err(Error::Format(_))));
    }

    #[test]
    fn params_load_rejects_architecture_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.bin");
        let net = Network::new(toy_cnn()).unwrap();
        save_params(&net, &path).unwrap();

        let mut other = Network::new(small_cnn((8, 8, 1), 3)).unwrap();
        assert!(matches!(
            load_params(&mut other, &path),
            Err(Error::Format(_))
        ));
    }
}
