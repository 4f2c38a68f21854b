#![allow(dead_code)]

use std::io::{ErrorKind, Read, Write};
use std::net::{SocketAddr, TcpStream};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use uvms_core::planning::{Executive, ExecutiveConfig, Phase, PlannerParams};
use uvms_core::simulation::{Scene, Simulator};
use uvms_service::protocol::{AckPayload, CommandPayload, ErrorPayload, FrameDecoder, NlPayload};
use uvms_service::{Message, Payload};

pub fn testbed() -> Scene {
    Scene::load(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/testbed.scene")).unwrap()
}

pub fn executive(seed: u64) -> Executive {
    let config = ExecutiveConfig { planner: PlannerParams { seed, ..ExecutiveConfig::default().planner }, ..Default::default() };
    Executive::new(Simulator::with_seed(testbed(), seed), config)
}

pub fn validator() -> jsonschema::Validator {
    let schema: serde_json::Value = serde_json::from_str(uvms_service::MESSAGE_SCHEMA).unwrap();
    jsonschema::validator_for(&schema).unwrap()
}

#[derive(Debug)]
pub enum Reply {
    Ack(AckPayload),
    Error(ErrorPayload),
}

/// Blocking protocol client over TCP.
pub struct Client {
    stream: TcpStream,
    decoder: FrameDecoder,
    seq: u64,
    pub received: Vec<Message>,
    pub sent: Vec<Message>,
}

const WAIT: Duration = Duration::from_secs(120);

impl Client {
    pub fn connect(addr: SocketAddr) -> Self {
        let stream = TcpStream::connect(addr).unwrap();
        stream.set_read_timeout(Some(Duration::from_millis(20))).unwrap();
        Self { stream, decoder: FrameDecoder::default(), seq: 0, received: Vec::new(), sent: Vec::new() }
    }

    pub fn send(&mut self, payload: Payload) -> u64 {
        self.seq += 1;
        let m = Message::new(self.seq, payload);
        self.stream.write_all(&m.encode()).unwrap();
        self.sent.push(m);
        self.seq
    }

    pub fn command(&mut self, c: CommandPayload) -> u64 {
        self.send(Payload::Command(c))
    }

    pub fn say(&mut self, text: &str) -> u64 {
        self.send(Payload::Nl(NlPayload { text: text.into() }))
    }

    pub fn send_body(&mut self, body: &[u8]) {
        self.stream.write_all(&(body.len() as u32).to_be_bytes()).unwrap();
        self.stream.write_all(body).unwrap();
    }

    /// Next message, if one arrives within `timeout`.
    pub fn recv(&mut self, timeout: Duration) -> Option<Message> {
        let deadline = Instant::now() + timeout;
        let mut buf = [0u8; 65536];
        loop {
            if let Some(body) = self.decoder.next_body().unwrap() {
                let m = Message::from_json(&body).unwrap();
                assert_eq!(m.to_json(), body, "service output is canonical");
                self.received.push(m.clone());
                return Some(m);
            }
            if Instant::now() >= deadline {
                return None;
            }
            match self.stream.read(&mut buf) {
                Ok(0) => return None,
                Ok(n) => self.decoder.push(&buf[..n]),
                Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
                Err(e) => panic!("read: {e}"),
            }
        }
    }

    pub fn wait(&mut self, mut pred: impl FnMut(&Message) -> bool) -> Message {
        let deadline = Instant::now() + WAIT;
        while Instant::now() < deadline {
            if let Some(m) = self.recv(Duration::from_millis(50)) {
                if pred(&m) {
                    return m;
                }
            }
        }
        panic!("timed out waiting; last received {:?}", self.received.last());
    }

    /// Ack or error answering `seq`.
    pub fn reply(&mut self, seq: u64) -> Reply {
        let m = self.wait(|m| match &m.payload {
            Payload::Ack(a) => a.ack == seq,
            Payload::Error(e) => e.ack == Some(seq),
            _ => false,
        });
        match m.payload {
            Payload::Ack(a) => Reply::Ack(a),
            Payload::Error(e) => Reply::Error(e),
            _ => unreachable!(),
        }
    }

    /// Phase once every earlier request has been carried out. Cloud requests
    /// queue behind motion, so their ack doubles as a barrier.
    pub fn settled_phase(&mut self) -> Phase {
        let seq = self.command(CommandPayload::RequestState { cloud: true });
        match self.reply(seq) {
            Reply::Ack(a) => a.phase,
            Reply::Error(e) => panic!("{e:?}"),
        }
    }
}
