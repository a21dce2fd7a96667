import { describe, expect, it } from "vitest";

import { SendQueue } from "../src/queue.js";

const sleep = (ms: number) => new Promise((r) => setTimeout(r, ms));

describe("SendQueue", () => {
  it("runs tasks strictly in enqueue order even when later tasks are faster", async () => {
    const queue = new SendQueue();
    const started: number[] = [];
    const finished: number[] = [];
    const make = (id: number, delay: number) => async () => {
      started.push(id);
      await sleep(delay);
      finished.push(id);
      return id;
    };
    const results = await Promise.all([
      queue.enqueue(make(1, 30)),
      queue.enqueue(make(2, 1)),
      queue.enqueue(make(3, 10)),
    ]);
    expect(results).toEqual([1, 2, 3]);
    expect(started).toEqual([1, 2, 3]);
    expect(finished).toEqual([1, 2, 3]); // no interleaving
  });

  it("does not start a task before the previous one settled", async () => {
    const queue = new SendQueue();
    let firstDone = false;
    const first = queue.enqueue(async () => {
      await sleep(20);
      firstDone = true;
    });
    const second = queue.enqueue(async () => {
      expect(firstDone).toBe(true);
    });
    await Promise.all([first, second]);
  });

  it("keeps serving after a rejected task", async () => {
    const queue = new SendQueue();
    const failing = queue.enqueue(async () => {
      throw new Error("boom");
    });
    const after = queue.enqueue(async () => "survived");
    await expect(failing).rejects.toThrow("boom");
    expect(await after).toBe("survived");
    expect(queue.size).toBe(0);
  });
});
