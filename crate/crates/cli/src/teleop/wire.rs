//! JSON messages exchanged over the teleoperation WebSocket, one per text frame.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseWire {
    pub x: f64,
    pub z: f64,
    pub pitch: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommandWire {
    pub vx: f64,
    pub h: f64,
    pub pitch: f64,
}

/// An active ground contact: world position and force components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactWire {
    pub x: f64,
    pub z: f64,
    pub normal: f64,
    pub tangential: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstMetrics {
    #[serde(rename = "E_vel_inst")]
    pub e_vel_inst: f64,
    #[serde(rename = "E_g_inst")]
    pub e_g_inst: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateMsg {
    pub t: f64,
    pub base: BaseWire,
    pub q: Vec<f64>,
    pub qdot_norm: f64,
    pub contacts: Vec<ContactWire>,
    pub command: CommandWire,
    pub metrics: InstMetrics,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum TeleopMessage {
    Cmd { vx: f64, h: f64, pitch: f64 },
    SelectClip { clip_id: String, speed: f64 },
    Push { vel: f64 },
    Reset {},
    Pause { on: bool },
    State(StateMsg),
    Clips { ids: Vec<String> },
    Error { msg: String },
}

impl TeleopMessage {
    pub fn error(msg: impl Into<String>) -> Self {
        TeleopMessage::Error { msg: msg.into() }
    }

    /// Messages a client may send. All of them change session state, so all need
    /// command authority.
    pub fn is_client_message(&self) -> bool {
        matches!(
            self,
            TeleopMessage::Cmd { .. }
                | TeleopMessage::SelectClip { .. }
                | TeleopMessage::Push { .. }
                | TeleopMessage::Reset {}
                | TeleopMessage::Pause { .. }
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("wire messages serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Parses and validates a frame received from a client. The error string is meant for
/// an `error` reply.
pub fn parse_inbound(text: &str) -> Result<TeleopMessage, String> {
    let msg = TeleopMessage::from_json(text).map_err(|e| format!("malformed message: {e}"))?;
    if !msg.is_client_message() {
        return Err("server-only message type cannot be sent by a client".into());
    }
    match &msg {
        TeleopMessage::SelectClip { speed, .. } if !(*speed > 0.0) => {
            Err(format!("speed must be positive, got {speed}"))
        }
        _ => Ok(msg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_names_on_the_wire() {
        assert_eq!(
            TeleopMessage::Cmd { vx: 0.5, h: 0.6, pitch: 0.0 }.to_json(),
            r#"{"type":"cmd","vx":0.5,"h":0.6,"pitch":0.0}"#
        );
        assert_eq!(TeleopMessage::Reset {}.to_json(), r#"{"type":"reset"}"#);
        let m = TeleopMessage::SelectClip { clip_id: "wave_000".into(), speed: 1.0 };
        assert_eq!(m.to_json(), r#"{"type":"select_clip","clip_id":"wave_000","speed":1.0}"#);
        let state = TeleopMessage::State(StateMsg {
            t: 0.0,
            base: BaseWire { x: 0.0, z: 0.6, pitch: 0.0 },
            q: vec![],
            qdot_norm: 0.0,
            contacts: vec![],
            command: CommandWire { vx: 0.0, h: 0.6, pitch: 0.0 },
            metrics: InstMetrics { e_vel_inst: 0.0, e_g_inst: 0.0 },
            alpha: 1.0,
        });
        let v: serde_json::Value = serde_json::from_str(&state.to_json()).unwrap();
        assert_eq!(v["type"], "state");
        assert!(v["metrics"]["E_vel_inst"].is_number());
        assert!(v["metrics"]["E_g_inst"].is_number());
    }

    #[test]
    fn inbound_validation() {
        assert!(parse_inbound(r#"{"type":"reset"}"#).is_ok());
        assert!(parse_inbound(r#"{"type":"push","vel":1}"#).is_ok());
        assert!(parse_inbound(r#"{"type":"cmd","vx":0.5}"#).is_err());
        assert!(parse_inbound(r#"{"type":"cmd","vx":0.5,"h":0.6,"pitch":0,"extra":1}"#).is_err());
        assert!(parse_inbound(r#"{"type":"jump"}"#).is_err());
        assert!(parse_inbound("not json").is_err());
        assert!(parse_inbound(r#"{"type":"error","msg":"x"}"#).is_err());
        assert!(parse_inbound(r#"{"type":"select_clip","clip_id":"a","speed":0}"#).is_err());
    }
}
