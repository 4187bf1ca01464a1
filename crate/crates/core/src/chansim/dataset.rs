//! Dataset files: a container (magic `ENGD`) holding instances and graphs.

use std::path::Path;

use num_complex::Complex64;

use super::scenario::{IbcData, ScenarioConfig, ScenarioInstance, ScenarioKind};
use crate::container::{Container, Value};
use crate::error::{Error, Result};
use crate::hetgraph::HetGraph;

pub const DATASET_MAGIC: [u8; 4] = *b"ENGD";
pub const DATASET_VERSION: u32 = 1;

fn complex_value(shape: Vec<usize>, data: &[Complex64]) -> Value {
    let mut shape = shape;
    shape.push(2);
    Value::F64 {
        shape,
        data: data.iter().flat_map(|c| [c.re, c.im]).collect(),
    }
}

fn complex_entry(c: &Container, name: &str) -> Result<Vec<Complex64>> {
    let t = c.tensor(name)?;
    if t.shape().last() != Some(&2) {
        return Err(Error::format(format!("entry '{name}' is not complex")));
    }
    Ok(t.data().chunks(2).map(|p| Complex64::new(p[0], p[1])).collect())
}

fn usize_list(v: &[usize]) -> Value {
    Value::U64 {
        shape: vec![v.len()],
        data: v.iter().map(|&x| x as u64).collect(),
    }
}

fn usize_entry(c: &Container, name: &str) -> Result<Vec<usize>> {
    Ok(c.u64s(name)?.1.into_iter().map(|x| x as usize).collect())
}

pub fn instance_to_container(inst: &ScenarioInstance, prefix: &str, c: &mut Container) {
    let (m, k, n) = (inst.n_bs, inst.n_ue, inst.n_antennas);
    c.push(format!("{prefix}kind"), Value::Text(inst.kind.name().into()));
    c.push(format!("{prefix}dims"), usize_list(&[m, k, n]));
    c.push(
        format!("{prefix}channels"),
        complex_value(vec![m, k, n], &inst.channels),
    );
    c.push(
        format!("{prefix}budgets"),
        Value::F64 {
            shape: vec![m],
            data: inst.budgets.clone(),
        },
    );
    c.push(
        format!("{prefix}noise"),
        Value::F64 {
            shape: vec![k],
            data: inst.noise.clone(),
        },
    );
    c.push(format!("{prefix}serving"), usize_list(&inst.serving));
    if let Some(d) = &inst.ibc {
        c.push(format!("{prefix}ibc.n_cells"), Value::scalar_u64(d.n_cells as u64));
        c.push(format!("{prefix}ibc.tx_cell"), usize_list(&d.tx_cell));
        c.push(format!("{prefix}ibc.rx_cell"), usize_list(&d.rx_cell));
        c.push(format!("{prefix}ibc.beams"), complex_value(vec![k, n], &d.beams));
        c.push(
            format!("{prefix}ibc.gains"),
            Value::F64 {
                shape: vec![k, k],
                data: d.gains.clone(),
            },
        );
    }
}

pub fn instance_from_container(prefix: &str, c: &Container) -> Result<ScenarioInstance> {
    let kind = ScenarioKind::parse(c.text(&format!("{prefix}kind"))?).map_err(|e| Error::format(e.to_string()))?;
    let dims = usize_entry(c, &format!("{prefix}dims"))?;
    let [n_bs, n_ue, n_antennas] = dims[..] else {
        return Err(Error::format("instance dims must have three entries"));
    };
    let ibc = if kind == ScenarioKind::Ibc {
        Some(IbcData {
            n_cells: c.u64_scalar(&format!("{prefix}ibc.n_cells"))? as usize,
            tx_cell: usize_entry(c, &format!("{prefix}ibc.tx_cell"))?,
            rx_cell: usize_entry(c, &format!("{prefix}ibc.rx_cell"))?,
            beams: complex_entry(c, &format!("{prefix}ibc.beams"))?,
            gains: c.tensor(&format!("{prefix}ibc.gains"))?.into_data(),
        })
    } else {
        None
    };
    let inst = ScenarioInstance {
        kind,
        n_bs,
        n_ue,
        n_antennas,
        channels: complex_entry(c, &format!("{prefix}channels"))?,
        budgets: c.tensor(&format!("{prefix}budgets"))?.into_data(),
        noise: c.tensor(&format!("{prefix}noise"))?.into_data(),
        serving: usize_entry(c, &format!("{prefix}serving"))?,
        ibc,
    };
    inst.validate().map_err(|e| Error::format(e.to_string()))?;
    Ok(inst)
}

/// Generates `count` instances of `cfg` from `seed` (sample `i` uses stream `i`).
pub fn generate_dataset(cfg: &ScenarioConfig, seed: u64, count: usize) -> Result<Vec<ScenarioInstance>> {
    use rayon::prelude::*;
    (0..count as u64)
        .into_par_iter()
        .map(|i| cfg.generate(seed, i))
        .collect()
}

pub fn write_dataset(path: &Path, cfg: &ScenarioConfig, instances: &[ScenarioInstance]) -> Result<()> {
    let mut c = Container::new(DATASET_MAGIC, DATASET_VERSION);
    c.push(
        "config",
        Value::Text(toml::to_string(cfg).map_err(|e| Error::Config(e.to_string()))?),
    );
    c.push("count", Value::scalar_u64(instances.len() as u64));
    for (i, inst) in instances.iter().enumerate() {
        instance_to_container(inst, &format!("{i}."), &mut c);
        inst.graph()?.to_container(&format!("{i}.graph."), &mut c);
    }
    c.save(path)
}

pub fn read_dataset(path: &Path) -> Result<(ScenarioConfig, Vec<(ScenarioInstance, HetGraph)>)> {
    let c = Container::load(path, DATASET_MAGIC, DATASET_VERSION)?;
    let cfg: ScenarioConfig =
        toml::from_str(c.text("config")?).map_err(|e| Error::format(format!("config echo: {e}")))?;
    let count = c.u64_scalar("count")? as usize;
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let inst = instance_from_container(&format!("{i}."), &c)?;
        let g = HetGraph::from_container(&format!("{i}.graph."), &c)?;
        if g.num_tx() != inst.num_tx() || g.num_rx() != inst.num_rx() {
            return Err(Error::format(format!("sample {i}: graph and instance sizes differ")));
        }
        out.push((inst, g));
    }
    Ok((cfg, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for kind in [ScenarioKind::Ic, ScenarioKind::Ibc, ScenarioKind::Coop] {
            let cfg = ScenarioConfig::default_for(kind);
            let insts = generate_dataset(&cfg, 5, 3).unwrap();
            let path = dir.path().join(format!("{}.bin", kind.name()));
            write_dataset(&path, &cfg, &insts).unwrap();
            let (cfg2, back) = read_dataset(&path).unwrap();
            assert_eq!(cfg2, cfg);
            assert_eq!(back.len(), 3);
            for (orig, (inst, g)) in insts.iter().zip(&back) {
                assert_eq!(orig, inst);
                assert_eq!(&orig.graph().unwrap(), g);
            }
        }
    }

    #[test]
    fn corrupt_dataset_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.bin");
        let cfg = ScenarioConfig::default_for(ScenarioKind::Ic);
        write_dataset(&path, &cfg, &generate_dataset(&cfg, 1, 1).unwrap()).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        match read_dataset(&path) {
            Err(Error::Format { path: Some(p), .. }) => assert_eq!(p, path),
            other => panic!("unexpected {other:?}"),
        }
    }
}
