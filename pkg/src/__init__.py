# ConRL Toolkit
