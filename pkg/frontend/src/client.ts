// Connection machine around one WebSocket. Reconnects with a fixed
// backoff, renegotiates the version line, and resets both id counters on
// every fresh connection (ids are monotone per connection, per direction).

import {
  IdAllocator,
  PROTOCOL_VERSION,
  ParsedLine,
  WireMessage,
  encodeMessage,
  parseLine,
} from "./protocol.js";

/** The slice of the WebSocket API the client actually uses. */
export interface SocketLike {
  send(data: string): void;
  close(): void;
  onopen: (() => void) | null;
  onmessage: ((event: { data: unknown }) => void) | null;
  onclose: (() => void) | null;
  onerror: (() => void) | null;
}

export interface ClientHooks {
  onMessage(message: WireMessage): void;
  onOpen(): void;
  onClose(): void;
  onProtocolError(reason: string): void;
}

export class ServiceClient {
  private socket: SocketLike | null = null;
  private ids = new IdAllocator();
  private reconnectTimer: ReturnType<typeof setTimeout> | null = null;
  private stopped = false;
  private versionOk = false;
  connected = false;

  constructor(
    private readonly makeSocket: () => SocketLike,
    private readonly hooks: ClientHooks,
    private readonly reconnectMs = 1500,
  ) {}

  connect(): void {
    this.stopped = false;
    this.open();
  }

  private open(): void {
    const socket = this.makeSocket();
    this.socket = socket;
    this.versionOk = false;
    socket.onopen = () => {
      this.connected = true;
      this.ids.reset();
      socket.send(JSON.stringify({ version: PROTOCOL_VERSION }) + "\n");
      this.hooks.onOpen();
    };
    socket.onmessage = (event) => {
      if (typeof event.data !== "string") {
        return;
      }
      for (const line of event.data.split("\n")) {
        if (line.trim().length > 0) {
          this.handleLine(parseLine(line));
        }
      }
    };
    socket.onerror = () => socket.close();
    socket.onclose = () => {
      const wasConnected = this.connected;
      this.connected = false;
      this.socket = null;
      if (wasConnected) {
        this.hooks.onClose();
      }
      this.scheduleReconnect();
    };
  }

  private handleLine(parsed: ParsedLine): void {
    if (parsed.type === "version") {
      if (parsed.version !== PROTOCOL_VERSION) {
        this.hooks.onProtocolError(
          `server speaks ${parsed.version}, this console speaks ${PROTOCOL_VERSION}`,
        );
        this.stop();
      } else {
        this.versionOk = true;
      }
      return;
    }
    if (parsed.type === "invalid" || !this.versionOk) {
      return; // tolerate garbage; nothing counts before the version line
    }
    this.hooks.onMessage(parsed.message);
  }

  /** Send one request; returns its id, or null when not connected. */
  send(kind: string, payload: Record<string, unknown> | null): number | null {
    if (!this.connected || this.socket === null) {
      return null;
    }
    const id = this.ids.take();
    this.socket.send(encodeMessage(kind, id, payload) + "\n");
    return id;
  }

  private scheduleReconnect(): void {
    if (this.stopped || this.reconnectTimer !== null) {
      return;
    }
    this.reconnectTimer = setTimeout(() => {
      this.reconnectTimer = null;
      if (!this.stopped) {
        this.open();
      }
    }, this.reconnectMs);
  }

  /** Stop for good: no further reconnect attempts. */
  stop(): void {
    this.stopped = true;
    if (this.reconnectTimer !== null) {
      clearTimeout(this.reconnectTimer);
      this.reconnectTimer = null;
    }
    this.socket?.close();
  }
}
