def clean(rows):
    return [r for r in rows if r]


async def fetch(url):
    return await download(url)


class Partitioner:
    def __init__(self, k):
        super().__init__()
        self.k = k

    def split(self, rows):
        return sorted(rows, key=len)


p = Partitioner(3)
print(p.split(clean(data)))
