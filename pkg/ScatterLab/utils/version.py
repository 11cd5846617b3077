__VERSION__: str = "0.1.0"
