def write_dataset(path, n=10):
    lines = []
    for i in range(n):
        c = i % 3
        lines.append(f"d{i}\t{c}\tcase {i} class{c} report text number {i}\n")
    path.write_text("".join(lines), encoding="utf-8")
    return n
