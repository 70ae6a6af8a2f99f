/*
Copyright 2026 The isohash Authors

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
*/

//! Line-delimited JSON progress records.

use std::io::Write;

use serde::Serialize;

/// Writes one JSON object per line to the wrapped writer.
pub struct ProgressSink {
    out: Box<dyn Write + Send>,
}

impl ProgressSink {
    pub fn new(out: Box<dyn Write + Send>) -> Self {
        ProgressSink { out }
    }

    pub fn record<T: Serialize>(&mut self, record: &T) {
        // Progress is advisory; a failed write must not abort a solve.
        if let Ok(line) = serde_json::to_string(record) {
            if let Err(e) = writeln!(self.out, "{line}") {
                log::warn!("dropping progress record: {e}");
            }
        }
    }
}

impl std::fmt::Debug for ProgressSink {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("ProgressSink")
    }
}

/// A `Write` that appends into a shared buffer, handy for capturing records.
#[derive(Clone, Default)]
pub struct SharedBuffer(pub std::sync::Arc<std::sync::Mutex<Vec<u8>>>);

impl Write for SharedBuffer {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.lock().expect("progress buffer poisoned").extend_from_slice(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

impl SharedBuffer {
    pub fn lines(&self) -> Vec<String> {
        let bytes = self.0.lock().expect("progress buffer poisoned").clone();
        String::from_utf8_lossy(&bytes).lines().map(str::to_owned).collect()
    }
}
