//! Client side of the wire protocol.

use thiserror::Error;
use tokio::net::tcp::{OwnedReadHalf, OwnedWriteHalf};
use tokio::net::TcpStream;

use crate::transport::{read_message, write_message, Message, Role, TransportError};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("cannot connect to {addr}: {source}")]
    Connect {
        addr: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("broker refused: {code}: {detail}")]
    Refused { code: String, detail: String },
    #[error("broker closed the connection")]
    Closed,
    #[error("unexpected {0} during handshake")]
    Unexpected(&'static str),
}

impl From<std::io::Error> for ClientError {
    fn from(e: std::io::Error) -> Self {
        ClientError::Transport(e.into())
    }
}

/// An established session.
pub struct Client {
    pub assigned_id: String,
    rd: OwnedReadHalf,
    wr: OwnedWriteHalf,
}

impl Client {
    /// Connects and performs the HELLO/WELCOME handshake.
    pub async fn connect(addr: &str, role: Role, name: &str) -> Result<Self, ClientError> {
        let stream = TcpStream::connect(addr).await.map_err(|source| ClientError::Connect {
            addr: addr.to_string(),
            source,
        })?;
        stream.set_nodelay(true)?;
        let (mut rd, mut wr) = stream.into_split();
        write_message(
            &mut wr,
            &Message::Hello {
                role,
                name: name.to_string(),
            },
        )
        .await?;
        match read_message(&mut rd).await? {
            Some(Message::Welcome { assigned_id }) => Ok(Client { assigned_id, rd, wr }),
            Some(Message::Error { code, detail }) => Err(ClientError::Refused { code, detail }),
            Some(other) => Err(ClientError::Unexpected(other.type_tag())),
            None => Err(ClientError::Closed),
        }
    }

    pub async fn send(&mut self, m: &Message) -> Result<(), ClientError> {
        Ok(write_message(&mut self.wr, m).await?)
    }

    /// Next message, or `None` once the broker closed the stream.
    pub async fn recv(&mut self) -> Result<Option<Message>, ClientError> {
        Ok(read_message(&mut self.rd).await?)
    }

    /// Separate halves for concurrent reading and writing.
    pub fn split(self) -> (Receiver, Sender) {
        (Receiver { rd: self.rd }, Sender { wr: self.wr })
    }
}

pub struct Receiver {
    rd: OwnedReadHalf,
}

impl Receiver {
    pub async fn recv(&mut self) -> Result<Option<Message>, ClientError> {
        Ok(read_message(&mut self.rd).await?)
    }
}

pub struct Sender {
    wr: OwnedWriteHalf,
}

impl Sender {
    pub async fn send(&mut self, m: &Message) -> Result<(), ClientError> {
        Ok(write_message(&mut self.wr, m).await?)
    }
}
