use xlm_tensor::Float;

use super::network::Model;

/// Reference trainable-parameter total and the accepted band (+-5%).
pub const PARAM_TARGET: usize = 32_073;
pub const PARAM_BAND: (usize, usize) = (30_469, 33_677);

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AuditRow {
    pub name: String,
    pub shape: Vec<usize>,
    pub count: usize,
    pub trainable: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamAudit {
    pub rows: Vec<AuditRow>,
    pub trainable: usize,
    pub fixed: usize,
}

pub fn count_parameters<T: Float>(m: &Model<T>) -> ParamAudit {
    let rows: Vec<AuditRow> = m
        .store
        .iter()
        .map(|(_, p)| AuditRow {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            count: p.value.numel(),
            trainable: p.trainable,
        })
        .collect();
    let trainable = rows.iter().filter(|r| r.trainable).map(|r| r.count).sum();
    let fixed = rows.iter().filter(|r| !r.trainable).map(|r| r.count).sum();
    ParamAudit { rows, trainable, fixed }
}

impl ParamAudit {
    pub fn within_band(&self) -> bool {
        (PARAM_BAND.0..=PARAM_BAND.1).contains(&self.trainable)
    }

    /// Trainable and fixed totals per layer (parameter name minus its last
    /// component), in model order.
    pub fn by_layer(&self) -> Vec<(String, usize, usize)> {
        let mut out: Vec<(String, usize, usize)> = Vec::new();
        for r in &self.rows {
            let layer = r.name.rsplit_once('.').map_or(r.name.as_str(), |(l, _)| l).to_string();
            if out.last().map(|e| &e.0) != Some(&layer) {
                out.push((layer, 0, 0));
            }
            let e = out.last_mut().unwrap();
            if r.trainable {
                e.1 += r.count;
            } else {
                e.2 += r.count;
            }
        }
        out
    }

    /// Trainable totals per top-level component (`stem`, `stage1`, ...).
    pub fn by_component(&self) -> Vec<(String, usize)> {
        let mut out: Vec<(String, usize)> = Vec::new();
        for r in self.rows.iter().filter(|r| r.trainable) {
            let top = r.name.split('.').next().unwrap_or("").to_string();
            match out.iter_mut().find(|e| e.0 == top) {
                Some(e) => e.1 += r.count,
                None => out.push((top, r.count)),
            }
        }
        out
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("{:<28} {:>9} {:>7}\n", "layer", "trainable", "fixed"));
        for (layer, t, f) in self.by_layer() {
            s.push_str(&format!("{layer:<28} {t:>9} {f:>7}\n"));
        }
        s.push_str(&format!("{:-<46}\n", ""));
        for (c, t) in self.by_component() {
            s.push_str(&format!("{c:<28} {t:>9}\n"));
        }
        s.push_str(&format!("{:-<46}\n", ""));
        s.push_str(&format!("{:<28} {:>9} {:>7}\n", "total", self.trainable, self.fixed));
        let dev = (self.trainable as f64 - PARAM_TARGET as f64) / PARAM_TARGET as f64 * 100.0;
        s.push_str(&format!(
            "reference {PARAM_TARGET}, band [{}, {}], deviation {dev:+.2}%, {}\n",
            PARAM_BAND.0,
            PARAM_BAND.1,
            if self.within_band() { "within band" } else { "OUTSIDE band" }
        ));
        s
    }
}
