/** Keeps at most one generate request in flight. A submission made while a
 * request is running replaces any earlier waiting one; when the running
 * request settles, a superseded reply is discarded by sequence number and
 * the newest waiting submission is launched. */
export class RequestGate<A, T> {
  private running = false;
  private waiting: A | null = null;
  private issued = 0;

  constructor(
    private readonly run: (args: A) => Promise<T>,
    private readonly apply: (result: T, args: A) => void,
    private readonly fail: (err: unknown, args: A) => void = () => {},
  ) {}

  get inFlight(): boolean {
    return this.running;
  }

  submit(args: A): void {
    if (this.running) {
      this.waiting = args;
      return;
    }
    void this.launch(args);
  }

  private async launch(args: A): Promise<void> {
    this.running = true;
    const seq = ++this.issued;
    try {
      const result = await this.run(args);
      if (this.fresh(seq)) this.apply(result, args);
    } catch (err) {
      if (this.fresh(seq)) this.fail(err, args);
    } finally {
      this.running = false;
      if (this.waiting !== null) {
        const next = this.waiting;
        this.waiting = null;
        this.submit(next);
      }
    }
  }

  /** A reply is stale when its target was superseded while it ran. */
  private fresh(seq: number): boolean {
    return seq === this.issued && this.waiting === null;
  }
}
