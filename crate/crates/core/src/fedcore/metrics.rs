use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::ChannelKind;

/// Bumped whenever the CSV columns or their formatting change.
pub const CSV_SCHEMA_VERSION: u32 = 1;

pub const CSV_HEADER: [&str; 8] = [
    "round",
    "channel",
    "server_test_acc",
    "server_val_loss",
    "avg_device_loss",
    "comm_time_s",
    "qber",
    "aborted_devices",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundMetrics {
    /// 1-based.
    pub round: usize,
    pub channel: ChannelKind,
    pub server_test_acc: f64,
    pub server_val_acc: f64,
    pub server_val_loss: f64,
    pub avg_device_loss: f64,
    /// Modelled channel time (uplink, downlink and key setup).
    pub comm_time_s: f64,
    /// Mean QBER over the round's QKD exchanges; `None` off the QKD channels.
    pub qber: Option<f64>,
    /// Devices whose uplink was rejected or whose downlink failed.
    pub aborted_devices: Vec<usize>,
    /// Whether the global parameters were updated this round.
    pub aggregated: bool,
    /// Measured monotonic time spent in channel phases, in microseconds.
    pub channel_wall_us: u64,
}

fn fixed(x: f64) -> String {
    format!("{x:.6}")
}

impl RoundMetrics {
    pub fn csv_fields(&self) -> [String; 8] {
        [
            self.round.to_string(),
            self.channel.to_string(),
            fixed(self.server_test_acc),
            fixed(self.server_val_loss),
            fixed(self.avg_device_loss),
            fixed(self.comm_time_s),
            self.qber.map(fixed).unwrap_or_default(),
            self.aborted_devices
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(";"),
        ]
    }
}

pub fn write_metrics_csv<W: Write>(rows: &[RoundMetrics], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record(r.csv_fields())?;
    }
    w.flush()?;
    Ok(())
}

pub fn metrics_csv_string(rows: &[RoundMetrics]) -> String {
    let mut buf = Vec::new();
    write_metrics_csv(rows, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("CSV is ASCII")
}

/// One parsed CSV row, as read back from disk.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct MetricsRow {
    pub round: usize,
    pub channel: String,
    pub server_test_acc: f64,
    pub server_val_loss: f64,
    pub avg_device_loss: f64,
    pub comm_time_s: f64,
    pub qber: Option<f64>,
    pub aborted_devices: String,
}

impl MetricsRow {
    pub fn aborted(&self) -> Vec<usize> {
        self.aborted_devices
            .split(';')
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().expect("device id"))
            .collect()
    }
}

pub fn read_metrics_csv<R: Read>(input: R) -> csv::Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(csv::Error::from(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            format!("unexpected header {header:?}"),
        )));
    }
    r.deserialize().collect()
}

/// Averages over all rounds and values at the last round, following the
/// usual federated results table (val/test accuracy, val loss, comm time).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub rounds: usize,
    pub avg_val_acc: f64,
    pub final_val_acc: f64,
    pub avg_test_acc: f64,
    pub final_test_acc: f64,
    pub avg_val_loss: f64,
    pub final_val_loss: f64,
    pub avg_comm_time_s: f64,
    pub avg_device_loss: f64,
    pub aggregated_rounds: usize,
    pub mean_qber: Option<f64>,
    pub total_channel_wall_us: u64,
}

impl Summary {
    pub fn from_rounds(rows: &[RoundMetrics]) -> Self {
        let n = rows.len().max(1) as f64;
        let mean = |f: fn(&RoundMetrics) -> f64| rows.iter().map(f).sum::<f64>() / n;
        let last = rows.last();
        let qbers: Vec<f64> = rows.iter().filter_map(|r| r.qber).collect();
        Self {
            rounds: rows.len(),
            avg_val_acc: mean(|r| r.server_val_acc),
            final_val_acc: last.map_or(0.0, |r| r.server_val_acc),
            avg_test_acc: mean(|r| r.server_test_acc),
            final_test_acc: last.map_or(0.0, |r| r.server_test_acc),
            avg_val_loss: mean(|r| r.server_val_loss),
            final_val_loss: last.map_or(0.0, |r| r.server_val_loss),
            avg_comm_time_s: mean(|r| r.comm_time_s),
            avg_device_loss: mean(|r| r.avg_device_loss),
            aggregated_rounds: rows.iter().filter(|r| r.aggregated).count(),
            mean_qber: (!qbers.is_empty()).then(|| qbers.iter().sum::<f64>() / qbers.len() as f64),
            total_channel_wall_us: rows.iter().map(|r| r.channel_wall_us).sum(),
        }
    }
}
