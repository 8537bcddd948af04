//! Link-budget physics: path loss, RSRP, SINR, CQI quantisation, per-UE
//! data rate and RSRP-max cell attachment.
//!
//! The SINR-to-rate chain quantises through the CQI table rather than the
//! Shannon bound: SINR is mapped to the largest CQI whose SNR floor it
//! clears, and the rate is `bandwidth * modulation_bits * code_rate / 1024`.

use crate::geometry::{Point3, RoomLayout};
use crate::units::{dbm_to_mw, linear_to_db};
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::OnceLock;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RadioError {
    #[error("failed to read CQI table {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("CQI table line {line}: {message}")]
    BadTableRow { line: usize, message: String },
    #[error("CQI table must have rows with strictly increasing SNR floors and indexes")]
    TableNotMonotone,
    #[error("CQI table row 0 must carry zero rate")]
    NonZeroOutOfRange,
    #[error("CQI table is empty")]
    EmptyTable,
    #[error("CQI index {0} outside table (0..={1})")]
    CqiOutOfRange(u8, u8),
    #[error("serving cell index {serving} out of range for {cells} cells")]
    BadServingCell { serving: usize, cells: usize },
    #[error("attachment requires at least one cell and matching power vector")]
    NoCells,
}

/// Radio-link parameters shared by every cell in a room.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RadioParams {
    /// Cell bandwidth in Hz.
    pub bandwidth_hz: f64,
    /// Carrier frequency in GHz (the path-loss model takes GHz directly).
    pub carrier_ghz: f64,
    /// Transmit antenna gain, dB.
    pub tx_gain_db: f64,
    /// Receive antenna gain, dB.
    pub rx_gain_db: f64,
    /// Thermal noise power, dBm.
    pub noise_power_dbm: f64,
    /// UE antenna height in meters, used by the NLoS path-loss branch.
    pub ue_height_m: f64,
}

impl Default for RadioParams {
    fn default() -> Self {
        RadioParams {
            bandwidth_hz: 20e6,
            carrier_ghz: 3.5,
            tx_gain_db: 0.0,
            rx_gain_db: 0.0,
            // Thermal noise over 20 MHz with no noise figure.
            noise_power_dbm: -101.0,
            ue_height_m: 1.0,
        }
    }
}

/// Indoor path loss in dB at 3D distance `d3d_m` meters. Distances below
/// 1 m are clamped to 1 m, the model's validity floor.
pub fn pathloss_db(d3d_m: f64, los: bool, params: &RadioParams) -> f64 {
    let d = d3d_m.max(1.0);
    let fc = params.carrier_ghz;
    if los {
        22.0 * d.log10() + 28.0 + 20.0 * fc.log10()
    } else {
        36.7 * d.log10() + 22.7 + 26.0 * fc.log10() - 0.3 * (params.ue_height_m - 1.5)
    }
}

/// One row of the CQI table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CqiEntry {
    /// Lowest SINR (dB) that still maps to this CQI; inclusive.
    pub snr_floor_db: f64,
    pub cqi_index: u8,
    /// Bits per modulation symbol (0 for out-of-range, 2/4/6 otherwise).
    pub modulation_bits: u8,
    /// Code rate times 1024.
    pub code_rate_x1024: u16,
}

impl CqiEntry {
    /// Spectral efficiency in bits per second per Hz.
    pub fn efficiency(&self) -> f64 {
        f64::from(self.modulation_bits) * f64::from(self.code_rate_x1024) / 1024.0
    }
}

/// The SINR-to-CQI quantisation table, ordered by increasing floor.
#[derive(Debug, Clone)]
pub struct CqiTable {
    entries: Vec<CqiEntry>,
}

impl CqiTable {
    /// The 16-row table shipped with the crate.
    pub fn standard() -> &'static CqiTable {
        static TABLE: OnceLock<CqiTable> = OnceLock::new();
        TABLE.get_or_init(|| {
            CqiTable::from_csv_str(include_str!("../data/cqi_table.csv"))
                .expect("embedded CQI table is valid")
        })
    }

    pub fn from_csv_str(text: &str) -> Result<CqiTable, RadioError> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (i == 0 && line.starts_with("snr_floor_db")) {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 4 {
                return Err(RadioError::BadTableRow {
                    line: i + 1,
                    message: format!("expected 4 fields, got {}", fields.len()),
                });
            }
            let floor = match fields[0] {
                "-inf" => f64::NEG_INFINITY,
                v => v.parse().map_err(|e| RadioError::BadTableRow {
                    line: i + 1,
                    message: format!("bad SNR floor {v:?}: {e}"),
                })?,
            };
            let parse = |v: &str, what: &str| -> Result<u32, RadioError> {
                v.parse().map_err(|e| RadioError::BadTableRow {
                    line: i + 1,
                    message: format!("bad {what} {v:?}: {e}"),
                })
            };
            entries.push(CqiEntry {
                snr_floor_db: floor,
                cqi_index: parse(fields[1], "CQI index")? as u8,
                modulation_bits: parse(fields[2], "modulation bits")? as u8,
                code_rate_x1024: parse(fields[3], "code rate")? as u16,
            });
        }
        CqiTable::new(entries)
    }

    pub fn from_csv_file(path: impl AsRef<Path>) -> Result<CqiTable, RadioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| RadioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        CqiTable::from_csv_str(&text)
    }

    pub fn new(entries: Vec<CqiEntry>) -> Result<CqiTable, RadioError> {
        if entries.is_empty() {
            return Err(RadioError::EmptyTable);
        }
        for w in entries.windows(2) {
            if !(w[0].snr_floor_db < w[1].snr_floor_db) || w[0].cqi_index >= w[1].cqi_index {
                return Err(RadioError::TableNotMonotone);
            }
        }
        if entries[0].efficiency() != 0.0 {
            return Err(RadioError::NonZeroOutOfRange);
        }
        Ok(CqiTable { entries })
    }

    pub fn entries(&self) -> &[CqiEntry] {
        &self.entries
    }

    pub fn max_cqi(&self) -> u8 {
        self.entries.last().expect("table non-empty").cqi_index
    }

    /// Largest CQI whose SNR floor is at or below `sinr_db` (floors are
    /// inclusive). Anything below the lowest finite floor maps to CQI 0.
    pub fn cqi_for_sinr(&self, sinr_db: f64) -> u8 {
        self.entries
            .iter()
            .rev()
            .find(|e| e.snr_floor_db <= sinr_db)
            .map(|e| e.cqi_index)
            .unwrap_or(self.entries[0].cqi_index)
    }

    /// Data rate in bits/second for a CQI at the given bandwidth.
    pub fn rate_bps(&self, cqi: u8, bandwidth_hz: f64) -> Result<f64, RadioError> {
        let entry = self
            .entries
            .iter()
            .find(|e| e.cqi_index == cqi)
            .ok_or(RadioError::CqiOutOfRange(cqi, self.max_cqi()))?;
        Ok(bandwidth_hz * entry.efficiency())
    }
}

/// Maps SINR straight to CQI through a table.
pub fn sinr_to_cqi(sinr_db: f64, table: &CqiTable) -> u8 {
    table.cqi_for_sinr(sinr_db)
}

/// Data rate in bits/second for `cqi` at `bandwidth_hz`.
pub fn cqi_to_rate_bps(cqi: u8, bandwidth_hz: f64, table: &CqiTable) -> Result<f64, RadioError> {
    table.rate_bps(cqi, bandwidth_hz)
}

/// SINR in dB for a UE served by `serving`, with every other cell acting as
/// an interferer. `powers_dbm[m]` and `pathloss_db_per_cell[m]` describe the
/// link from cell `m` to this UE. Computed in the linear domain.
pub fn sinr_db(
    serving: usize,
    powers_dbm: &[f64],
    pathloss_db_per_cell: &[f64],
    params: &RadioParams,
) -> Result<f64, RadioError> {
    let cells = powers_dbm.len();
    if serving >= cells || pathloss_db_per_cell.len() != cells {
        return Err(RadioError::BadServingCell { serving, cells });
    }
    let rx_mw = |m: usize| {
        dbm_to_mw(powers_dbm[m] + params.tx_gain_db + params.rx_gain_db - pathloss_db_per_cell[m])
    };
    let signal = rx_mw(serving);
    let noise = dbm_to_mw(params.noise_power_dbm);
    let interference: f64 = (0..cells).filter(|&m| m != serving).map(rx_mw).sum();
    Ok(linear_to_db(signal / (noise + interference)))
}

/// The radio state of one (cell, UE) link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkState {
    pub d3d_m: f64,
    pub los: bool,
    pub pathloss_db: f64,
    pub rsrp_dbm: f64,
    pub sinr_db: f64,
    pub cqi: u8,
    /// Rate this cell would deliver to the UE if it were serving.
    pub rate_bps: f64,
}

/// The full cells-by-UEs link matrix for one simulation instant.
#[derive(Debug, Clone)]
pub struct LinkGrid {
    n_cells: usize,
    n_ues: usize,
    entries: Vec<LinkState>,
}

impl LinkGrid {
    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn n_ues(&self) -> usize {
        self.n_ues
    }

    /// Link from cell `m` to UE `n`.
    pub fn link(&self, m: usize, n: usize) -> &LinkState {
        &self.entries[m * self.n_ues + n]
    }
}

/// Outcome of RSRP-max attachment: the serving cell per UE plus the link
/// matrix the decision was based on.
#[derive(Debug, Clone)]
pub struct Attachment {
    pub serving: Vec<usize>,
    pub grid: LinkGrid,
}

impl Attachment {
    /// Rate actually delivered to UE `n` by its serving cell, bits/second.
    pub fn ue_rate_bps(&self, n: usize) -> f64 {
        self.grid.link(self.serving[n], n).rate_bps
    }

    pub fn per_ue_rates_bps(&self) -> Vec<f64> {
        (0..self.grid.n_ues()).map(|n| self.ue_rate_bps(n)).collect()
    }

    /// UEs attached to each cell.
    pub fn counts_per_cell(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.grid.n_cells()];
        for &s in &self.serving {
            counts[s] += 1;
        }
        counts
    }
}

/// Attaches every UE to the cell with the highest RSRP (ties go to the
/// lowest cell index) and fills the complete link matrix. CQI is computed
/// for every (cell, UE) pair, treating that cell as serving and all others
/// as interferers.
pub fn attach_ues(
    ue_positions: &[Point3],
    layout: &RoomLayout,
    powers_dbm: &[f64],
    params: &RadioParams,
    table: &CqiTable,
) -> Result<Attachment, RadioError> {
    let n_cells = layout.n_cells();
    if n_cells == 0 || powers_dbm.len() != n_cells {
        return Err(RadioError::NoCells);
    }
    let n_ues = ue_positions.len();
    let mut entries = Vec::with_capacity(n_cells * n_ues);
    let mut serving = Vec::with_capacity(n_ues);

    // Path loss and RSRP for every pair first; attachment and SINR need the
    // whole column per UE.
    let mut pathloss = vec![0.0f64; n_cells * n_ues];
    let mut los_flags = vec![false; n_cells * n_ues];
    for (m, cell) in layout.cells().iter().enumerate() {
        for (n, ue) in ue_positions.iter().enumerate() {
            let los = layout.has_los(*cell, *ue);
            let pl = pathloss_db(cell.distance(*ue), los, params);
            pathloss[m * n_ues + n] = pl;
            los_flags[m * n_ues + n] = los;
        }
    }

    for n in 0..n_ues {
        let rsrp = |m: usize| {
            powers_dbm[m] + params.tx_gain_db + params.rx_gain_db - pathloss[m * n_ues + n]
        };
        let mut best = 0usize;
        for m in 1..n_cells {
            if rsrp(m) > rsrp(best) {
                best = m;
            }
        }
        serving.push(best);
    }

    for m in 0..n_cells {
        for n in 0..n_ues {
            let pl_column: Vec<f64> = (0..n_cells).map(|i| pathloss[i * n_ues + n]).collect();
            let sinr = sinr_db(m, powers_dbm, &pl_column, params)?;
            let cqi = table.cqi_for_sinr(sinr);
            let rate = table.rate_bps(cqi, params.bandwidth_hz)?;
            entries.push(LinkState {
                d3d_m: layout.cells()[m].distance(ue_positions[n]),
                los: los_flags[m * n_ues + n],
                pathloss_db: pathloss[m * n_ues + n],
                rsrp_dbm: powers_dbm[m] + params.tx_gain_db + params.rx_gain_db
                    - pathloss[m * n_ues + n],
                sinr_db: sinr,
                cqi,
                rate_bps: rate,
            });
        }
    }

    Ok(Attachment {
        serving,
        grid: LinkGrid {
            n_cells,
            n_ues,
            entries,
        },
    })
}
