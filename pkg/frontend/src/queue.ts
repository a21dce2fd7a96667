/**
 * Sequential task queue: tasks run strictly in enqueue order, one at a time,
 * so rapid chat sends produce replies in send order instead of interleaving.
 * A rejected task does not block the tasks queued after it.
 */
export class SendQueue {
  private tail: Promise<void> = Promise.resolve();
  private pending = 0;

  get size(): number {
    return this.pending;
  }

  enqueue<T>(task: () => Promise<T>): Promise<T> {
    this.pending += 1;
    const run = this.tail.then(() => task());
    this.tail = run.then(
      () => {
        this.pending -= 1;
      },
      () => {
        this.pending -= 1;
      },
    );
    return run;
  }
}
