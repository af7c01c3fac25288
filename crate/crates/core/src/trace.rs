//! Uniformly sampled named time series plus a time-sorted event log.
//!
//! CSV layout: a header row starting with `time_s`, then one row per
//! sample. The reader recovers the sample rate from the time column. Events
//! are not part of the CSV; they travel in the JSON summaries.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    sample_rate: f64,
    names: Vec<String>,
    data: Vec<Vec<f64>>,
    events: Vec<Event>,
}

impl Trace {
    pub fn new(sample_rate: f64) -> Self {
        Self {
            sample_rate,
            names: Vec::new(),
            data: Vec::new(),
            events: Vec::new(),
        }
    }

    /// Builds a trace from pre-sampled channels. All channels must share a length.
    pub fn from_channels<S: Into<String>>(
        sample_rate: f64,
        channels: impl IntoIterator<Item = (S, Vec<f64>)>,
    ) -> Result<Self> {
        let mut trace = Self::new(sample_rate);
        for (name, values) in channels {
            trace.add_channel(name, values)?;
        }
        Ok(trace)
    }

    pub fn add_channel(&mut self, name: impl Into<String>, values: Vec<f64>) -> Result<()> {
        let name = name.into();
        if let Some(first) = self.data.first() {
            if first.len() != values.len() {
                return Err(Error::invalid(
                    name,
                    format!("length {} differs from {}", values.len(), first.len()),
                ));
            }
        }
        if self.names.contains(&name) {
            return Err(Error::invalid(name, "duplicate channel"));
        }
        self.names.push(name);
        self.data.push(values);
        Ok(())
    }

    /// Appends one sample to every channel, in channel order.
    pub(crate) fn push_row(&mut self, row: &[f64]) {
        debug_assert_eq!(row.len(), self.data.len());
        for (col, &v) in self.data.iter_mut().zip(row) {
            col.push(v);
        }
    }

    pub(crate) fn with_names(sample_rate: f64, names: Vec<String>) -> Self {
        let data = vec![Vec::new(); names.len()];
        Self {
            sample_rate,
            names,
            data,
            events: Vec::new(),
        }
    }

    pub fn push_event(&mut self, time: f64, label: impl Into<String>) {
        let label = label.into();
        let pos = self.events.partition_point(|e| e.time <= time);
        self.events.insert(pos, Event { time, label });
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.data.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn channel(&self, name: &str) -> Result<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.data[i].as_slice())
            .ok_or_else(|| Error::MissingChannel(name.to_string()))
    }

    pub fn time(&self, index: usize) -> f64 {
        index as f64 / self.sample_rate
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.time(k)).collect()
    }

    /// Index of the first sample at or after `t`.
    pub fn index_at(&self, t: f64) -> usize {
        let k = (t * self.sample_rate - 1e-9).ceil().max(0.0) as usize;
        k.min(self.len())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        let mut header = vec!["time_s".to_string()];
        header.extend(self.names.iter().cloned());
        writer.write_record(&header)?;
        let mut row = Vec::with_capacity(header.len());
        for k in 0..self.len() {
            row.clear();
            row.push(format_f64(self.time(k)));
            row.extend(self.data.iter().map(|c| format_f64(c[k])));
            writer.write_record(&row)?;
        }
        writer.flush()?;
        Ok(())
    }

    /// Reads a trace written by [`Trace::write_csv`]; needs at least two rows.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let headers = rdr.headers()?.clone();
        if headers.get(0) != Some("time_s") {
            return Err(Error::invalid("csv", "first column must be `time_s`"));
        }
        let names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
        let mut times = Vec::new();
        let mut rows = Vec::new();
        for record in rdr.records() {
            let record = record?;
            let mut row = Vec::with_capacity(names.len());
            for (k, field) in record.iter().enumerate() {
                let v = field.parse::<f64>().map_err(|e| Error::invalid("csv", e.to_string()))?;
                if k == 0 {
                    times.push(v);
                } else {
                    row.push(v);
                }
            }
            rows.push(row);
        }
        let n = times.len();
        if n < 2 || !(times[n - 1] > times[0]) {
            return Err(Error::invalid("csv", "need two or more increasing time rows"));
        }
        let rate = (n - 1) as f64 / (times[n - 1] - times[0]);
        let snapped = rate.round();
        let sample_rate = if ((rate - snapped) / rate).abs() < 1e-9 {
            snapped
        } else {
            rate
        };
        let mut trace = Self::with_names(sample_rate, names);
        for row in &rows {
            trace.push_row(row);
        }
        Ok(trace)
    }
}

/// Shortest representation that parses back to the same `f64`.
pub(crate) fn format_f64(v: f64) -> String {
    format!("{v:?}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_preserves_values() {
        let trace = Trace::from_channels(
            1000.0,
            [("v", vec![0.0, 1.5, -2.25e-7]), ("i", vec![3.0, 0.1, 1.0 / 3.0])],
        )
        .unwrap();
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("time_s,v,i\n"));
        let back = Trace::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.channel("i").unwrap(), trace.channel("i").unwrap());
        assert_eq!(back.sample_rate(), 1000.0);
    }

    #[test]
    fn mismatched_channel_length_rejected() {
        let mut trace = Trace::new(10.0);
        trace.add_channel("a", vec![1.0, 2.0]).unwrap();
        assert!(trace.add_channel("b", vec![1.0]).is_err());
    }

    #[test]
    fn events_stay_sorted() {
        let mut trace = Trace::new(1.0);
        trace.push_event(2.0, "b");
        trace.push_event(1.0, "a");
        trace.push_event(3.0, "c");
        let times: Vec<f64> = trace.events().iter().map(|e| e.time).collect();
        assert_eq!(times, vec![1.0, 2.0, 3.0]);
    }
}
